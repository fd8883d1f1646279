import threading

import pytest

from ordcomp.cell_processor import (STATUS_COMPLETED, STATUS_FAILED, THREADS_ENV, CellTaskProcessor,
                                    default_threads)
from ordcomp.errors import ConfigError


def square(x):
    return x * x


def test_results_in_submission_order():
    with CellTaskProcessor(max_workers=4) as processor:
        results = processor.run_wave([(f"cell {i}", square, (i,)) for i in range(50)])
    assert results == [i * i for i in range(50)]


def test_results_do_not_depend_on_worker_count():
    tasks = [(str(i), square, (i - 7,)) for i in range(20)]
    with CellTaskProcessor(max_workers=1) as one, CellTaskProcessor(max_workers=8) as many:
        assert one.run_wave(tasks) == many.run_wave(tasks)


def test_first_failure_in_submission_order_is_raised():
    barrier = threading.Event()

    def slow_failure():
        barrier.wait(timeout=5)
        raise ValueError('first')

    def fast_failure():
        barrier.set()
        raise KeyError('second')

    with CellTaskProcessor(max_workers=2) as processor:
        with pytest.raises(ValueError):
            processor.run_wave([('a', slow_failure, ()), ('b', fast_failure, ())])
        counts = processor.counts()
    assert counts[STATUS_FAILED] == 2


def test_status_tracking():
    with CellTaskProcessor(max_workers=2) as processor:
        processor.run_wave([('only', square, (3,))])
        status = processor.get_status(0)
        assert processor.get_status(99) is None
    assert status['status'] == STATUS_COMPLETED
    assert status['label'] == 'only'
    assert status['error'] is None


def test_status_covers_the_current_wave_only():
    with CellTaskProcessor(max_workers=2) as processor:
        for wave in range(5):
            processor.run_wave([(f"{wave}.{i}", square, (i,)) for i in range(10)])
        assert processor.get_status(0) is None
        assert processor.get_status(49)['label'] == '4.9'
        assert processor.counts()[STATUS_COMPLETED] == 10
        assert len(processor.status_map) == 10
        assert not hasattr(processor.status_map[49], 'result')


def test_worker_count_must_be_positive():
    with pytest.raises(ConfigError):
        CellTaskProcessor(max_workers=0)


@pytest.mark.parametrize('value, expected', [(None, 1), ('', 1), ('3', 3)])
def test_default_threads(monkeypatch, value, expected):
    if value is None:
        monkeypatch.delenv(THREADS_ENV, raising=False)
    else:
        monkeypatch.setenv(THREADS_ENV, value)
    assert default_threads() == expected


@pytest.mark.parametrize('value', ['many', '0', '-2'])
def test_default_threads_rejects_bad_values(monkeypatch, value):
    monkeypatch.setenv(THREADS_ENV, value)
    with pytest.raises(ConfigError):
        default_threads()
