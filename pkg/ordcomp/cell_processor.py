"""
Cell Processing Module

Thread pool for independent per-cell solver tasks. Tasks are submitted in
waves; each wave's results come back in submission order, so everything
folded from them is independent of the number of workers.
"""

import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from .errors import ConfigError
from .log_utils import get_logger

logger = get_logger(__name__)

# Status constants
STATUS_PENDING = 'pending'
STATUS_PROCESSING = 'processing'
STATUS_COMPLETED = 'completed'
STATUS_FAILED = 'failed'

THREADS_ENV = 'ORDCOMP_THREADS'


class CellStatus:
    """Status information for one cell task"""

    def __init__(self, task_id: int, label: str):
        self.task_id = task_id
        self.label = label
        self.status = STATUS_PENDING
        self.error: Optional[BaseException] = None
        self.created_at = time.time()
        self.updated_at = time.time()

    def to_dict(self) -> Dict[str, Any]:
        """Convert status to dictionary"""
        return {
            'task_id': self.task_id,
            'label': self.label,
            'status': self.status,
            'created_at': self.created_at,
            'updated_at': self.updated_at,
            'error': str(self.error) if self.status == STATUS_FAILED else None,
        }


def default_threads() -> int:
    """Worker count from ORDCOMP_THREADS, else 1"""
    value = os.environ.get(THREADS_ENV)
    if value is None or not value.strip():
        return 1
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}")
    if threads < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {threads}")
    return threads


class CellTaskProcessor:
    """Runs waves of cell tasks on a thread pool"""

    def __init__(self, max_workers: Optional[int] = None):
        """
        Initialize the processor

        Args:
            max_workers: Maximum number of worker threads (default: ORDCOMP_THREADS or 1)
        """
        self.max_workers = max_workers if max_workers is not None else default_threads()
        if self.max_workers < 1:
            raise ConfigError(f"Worker count must be >= 1, got {self.max_workers}")
        self.executor = ThreadPoolExecutor(max_workers=self.max_workers)
        self.status_map: Dict[int, CellStatus] = {}
        self.status_lock = threading.Lock()
        self._next_id = 0

    def __enter__(self) -> 'CellTaskProcessor':
        return self

    def __exit__(self, *exc_info) -> None:
        self.shutdown()

    def _process(self, task_id: int, fn: Callable, args: Tuple) -> Any:
        with self.status_lock:
            status = self.status_map[task_id]
            status.status = STATUS_PROCESSING
            status.updated_at = time.time()
        try:
            result = fn(*args)
        except Exception as e:
            with self.status_lock:
                status.status = STATUS_FAILED
                status.error = e
                status.updated_at = time.time()
            logger.debug(f"Cell task {status.label} failed: {e}")
            raise
        with self.status_lock:
            status.status = STATUS_COMPLETED
            status.updated_at = time.time()
        return result

    def run_wave(self, tasks: Sequence[Tuple[str, Callable, Tuple]]) -> List[Any]:
        """
        Run one wave of tasks and wait for all of them

        Status records cover the current wave only and hold no results.

        Args:
            tasks: (label, function, args) triples

        Returns:
            Results in submission order

        Raises:
            The exception of the first failed task in submission order
        """
        with self.status_lock:
            self.status_map.clear()
        futures = []
        for label, fn, args in tasks:
            with self.status_lock:
                task_id = self._next_id
                self._next_id += 1
                self.status_map[task_id] = CellStatus(task_id, label)
            futures.append(self.executor.submit(self._process, task_id, fn, args))
        results = []
        failure = None
        for future in futures:
            try:
                results.append(future.result())
            except Exception as e:
                if failure is None:
                    failure = e
                results.append(None)
        logger.debug(f"Wave of {len(futures)} cell tasks finished: {self.counts()}")
        if failure is not None:
            raise failure
        return results

    def counts(self) -> Dict[str, int]:
        """Number of tasks per status in the current wave"""
        with self.status_lock:
            counts = {STATUS_PENDING: 0, STATUS_PROCESSING: 0, STATUS_COMPLETED: 0, STATUS_FAILED: 0}
            for status in self.status_map.values():
                counts[status.status] += 1
            return counts

    def get_status(self, task_id: int) -> Optional[Dict[str, Any]]:
        """
        Get status for a task

        Args:
            task_id: Task ID

        Returns:
            Status dictionary or None if the task ID is not found
        """
        with self.status_lock:
            status = self.status_map.get(task_id)
            return status.to_dict() if status else None

    def shutdown(self) -> None:
        """Shutdown the executor"""
        logger.debug("Shutting down cell processor")
        self.executor.shutdown(wait=True)
