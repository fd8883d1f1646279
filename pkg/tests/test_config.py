import pytest

from ordcomp.cell_processor import THREADS_ENV
from ordcomp.config import RunConfig
from ordcomp.core_types import Box
from ordcomp.errors import ConfigError

CONFIG_TEXT = """
# solver settings
operator = dx(u) = g
eps = 0.05
n-list = 10, 20, 40
domain_lo = 0
domain_hi = 6.283185307179586
rhs.g = cos(5*x1)
param.nu = 0.01
has_time = auto
neighbor_matching = yes
degree = none
"""


def test_from_text():
    config = RunConfig.from_text(CONFIG_TEXT)
    assert config.operator == 'dx(u) = g'
    assert config.eps == 0.05
    assert config.n_list == [10, 20, 40]
    assert config.rhs == {'g': 'cos(5*x1)'}
    assert config.param == {'nu': 0.01}
    assert config.has_time is None
    assert config.neighbor_matching is True
    assert config.degree is None
    assert config.domain().hi.coords == (6.283185307179586,)


def test_defaults():
    config = RunConfig()
    assert config.gap_tol == 1e-7
    assert config.density == 4
    assert (config.r_inner, config.r_outer) == (1, 2)
    assert config.lattice_cfg().gap_tol == 1e-7


@pytest.mark.parametrize('text', [
    'eps',
    'unknown_key = 1',
    'eps = wide',
    'param.nu = thick',
    'colour.x = 1',
    'neighbor_matching = maybe',
])
def test_bad_lines(text):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_text('# first\n' + text, path='run.cfg')
    assert 'run.cfg:2' in info.value.message
    assert info.value.exit_code == 2


def test_file_then_flags(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('eps = 0.05\nseed = 3\nrhs.g = 1\n')
    config = RunConfig.from_file(str(path))
    config.override({'eps': 0.2, 'seed': None, 'rhs': {'h': '2'}, 'cells': [], 'not_a_setting': 1})
    assert config.eps == 0.2
    assert config.seed == 3
    assert config.rhs == {'g': '1', 'h': '2'}
    assert config.cells == []


def test_threads(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, '3')
    config = RunConfig()
    assert config.resolved_threads() == 3
    config.threads = 2
    assert config.resolved_threads() == 2
    config.threads = 0
    with pytest.raises(ConfigError):
        config.resolved_threads()


def test_operator_text(tmp_path):
    config = RunConfig(operator='dx(u) = g; u = 1')
    assert config.operator_text() == 'dx(u) = g\n u = 1'
    path = tmp_path / 'op.txt'
    path.write_text('dt(u) = f\n')
    config.operator_path = str(path)
    assert config.operator_text() == 'dt(u) = f\n'
    with pytest.raises(ConfigError):
        RunConfig().operator_text()


def test_domain_checks():
    with pytest.raises(ConfigError):
        RunConfig().domain()
    with pytest.raises(ConfigError):
        RunConfig(domain_lo=[0.0, 0.0], domain_hi=[1.0]).domain()


def test_solver_configs(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    config = RunConfig.from_text('domain_lo = 0,0\ndomain_hi = 1,2\ncells = 2,3\nsamples = 5\njet_tol = 1e-8')
    cfg = config.solve_cfg(config.domain())
    assert list(cfg.cells_per_axis) == [2, 3]
    assert cfg.samples == 5
    assert cfg.threads == 1
    assert len(cfg.initial_cells) == 6
    assert config.jet_cfg().tol == 1e-8


def test_lattice_grid_needs_a_box():
    config = RunConfig(grid_nodes=5)
    assert config.lattice_cfg().grid is None
    assert config.lattice_cfg(Box.unit(2)).grid.shape == (5, 5)
