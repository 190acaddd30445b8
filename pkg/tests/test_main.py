"""End-to-end tests of the command-line interface."""

import json
from pathlib import Path

import pandas as pd
import pytest

from epinet.main import main
from epinet.reports.report_generator import RunManifest

DATA = Path(__file__).parent / 'data'


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ('EPI_SEED', 'EPI_WORKERS', 'EPI_OUTPUT_DIR', 'EPI_TOL', 'EPI_MAX_ITER', 'LOG_FILE'):
        monkeypatch.delenv(name, raising=False)


def test_analyze_writes_report_and_manifest(symmetric_model, write_config, tmp_path):
    config = write_config(symmetric_model, N=10, I0=[1, 1])
    out = tmp_path / 'out'
    assert main(['analyze', '--config', str(config), '--output-dir', str(out)]) == 0
    report = json.loads((out / 'analyze.json').read_text())
    assert report['R0'] == pytest.approx(2.0)
    assert report['p_I0'] == pytest.approx(0.75)
    manifest = json.loads((out / 'analyze.manifest.json').read_text())
    assert manifest['subcommand'] == 'analyze'
    assert manifest['outputs'] == ['analyze.json']
    assert len(manifest['config_sha256']) == 64


def test_simulation_outputs_are_byte_identical(symmetric_model, write_config, tmp_path):
    config = write_config(symmetric_model, N=20)
    for name in ('a', 'b'):
        argv = ['simulate', '--config', str(config), '--process', 'population', '--t-end', '5',
                '--seed', '11', '--output-dir', str(tmp_path / name), '--stem', 'run']
        assert main(argv) == 0
    for output in ('run.json', 'run.csv'):
        assert (tmp_path / 'a' / output).read_bytes() == (tmp_path / 'b' / output).read_bytes()


def test_invalid_config_exits_with_1(tmp_path, capsys):
    config = tmp_path / 'bad.json'
    config.write_text(json.dumps({'n': 1, 'B': [1], 'b': [0], 'd': [1], 'theta': [[0.5]],
                                  'beta': [1], 'gamma': [1]}), encoding='utf-8')
    out = tmp_path / 'out'
    assert main(['analyze', '--config', str(config), '--output-dir', str(out)]) == 1
    stderr = capsys.readouterr().err
    assert 'epinet:error:ModelValidationError: diagonal transfer' in stderr
    assert not out.exists() or list(out.iterdir()) == []


def test_missing_config_exits_with_1(tmp_path, capsys):
    assert main(['analyze', '--config', str(tmp_path / 'absent.json'), '--output-dir', str(tmp_path)]) == 1
    assert 'epinet:error:FileNotFoundError' in capsys.readouterr().err


def test_convergence_failure_exits_with_2(fmd_model, write_config, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv('EPI_TOL', '1e-15')
    monkeypatch.setenv('EPI_MAX_ITER', '3')
    config = write_config(fmd_model, x0=[1.0])
    assert main(['outbreak-prob', '--config', str(config), '--output-dir', str(tmp_path / 'out')]) == 2
    assert 'epinet:error:ConvergenceError' in capsys.readouterr().err


def test_inconclusive_scaling_exits_with_3(symmetric_model, write_config, tmp_path):
    config = write_config(symmetric_model.replace(beta=[0.5, 0.5]))
    argv = ['ensemble', '--config', str(config), '--experiment', 'scaling', '--runs', '5',
            '--output-dir', str(tmp_path / 'out')]
    assert main(argv) == 3


def test_bad_environment_setting(monkeypatch, symmetric_model, write_config, tmp_path, capsys):
    monkeypatch.setenv('EPI_WORKERS', 'many')
    config = write_config(symmetric_model)
    assert main(['analyze', '--config', str(config), '--output-dir', str(tmp_path)]) == 1
    assert 'epinet:error:ConfigError' in capsys.readouterr().err


def test_outbreak_prob_with_sweep(symmetric_model, write_config, tmp_path):
    config = write_config(symmetric_model)
    out = tmp_path / 'out'
    assert main(['outbreak-prob', '--config', str(config), '--sweep', '0.5,1,2', '--output-dir', str(out)]) == 0
    report = json.loads((out / 'outbreak-prob.json').read_text())
    assert report['q'] == pytest.approx([0.5, 0.5])
    assert (out / 'outbreak-prob_sweep.csv').read_text().splitlines()[0] == 'k,R0,p_mean,p_sd,p_min,p_max'


def test_calibrate_from_csv(tmp_path):
    out = tmp_path / 'out'
    argv = ['calibrate', '--nodes', str(DATA / 'nodes.csv'), '--moves', str(DATA / 'moves.csv'),
            '--output-dir', str(out)]
    assert main(argv) == 0
    model = json.loads((out / 'calibrate.json').read_text())
    assert model['node_ids'] == ['h01', 'h02', 'm03']
    assert model['theta'][0][1] == pytest.approx(1.1)
    assert (out / 'calibrate_summary.csv').exists()


def test_synth_then_analyze(tmp_path):
    out = tmp_path / 'out'
    assert main(['synth', '--n', '4', '--density', '0.5', '--seed', '3', '--output-dir', str(out)]) == 0
    assert json.loads((out / 'synth.json').read_text())['n'] == 4
    assert main(['analyze', '--config', str(out / 'synth.json'), '--output-dir', str(out)]) == 0
    assert json.loads((out / 'analyze.json').read_text())['subcritical'] is True


def test_equilibrium(endemic_model, write_config, tmp_path):
    config = write_config(endemic_model)
    out = tmp_path / 'out'
    assert main(['equilibrium', '--config', str(config), '--output-dir', str(out)]) == 0
    report = json.loads((out / 'equilibrium.json').read_text())
    assert report['classification'] == 'stable-endemic'


def test_outbreak_prob_seed_node_and_iteration_flags(symmetric_model, write_config, tmp_path):
    config = write_config(symmetric_model, N=10, I0=[1, 1])
    out = tmp_path / 'out'
    argv = ['outbreak-prob', '--config', str(config), '--seed-node', '1', '--tol', '1e-10',
            '--max-iter', '5000', '--output-dir', str(out)]
    assert main(argv) == 0
    report = json.loads((out / 'outbreak-prob.json').read_text())
    assert report['I0'] == [0, 1]
    assert report['p_I0'] == pytest.approx(0.5, abs=1e-8)
    assert report['gap'] < 1e-10
    manifest = json.loads((out / 'outbreak-prob.manifest.json').read_text())
    assert manifest['flags']['seed_node'] == 1
    assert manifest['flags']['max_iter'] == 5000


def test_outbreak_prob_iteration_cap_from_flag(fmd_model, write_config, tmp_path, capsys):
    config = write_config(fmd_model, x0=[1.0])
    argv = ['outbreak-prob', '--config', str(config), '--tol', '1e-15', '--max-iter', '3',
            '--output-dir', str(tmp_path / 'out')]
    assert main(argv) == 2
    assert 'epinet:error:ConvergenceError' in capsys.readouterr().err


def test_outbreak_prob_rejects_unknown_seed_node(symmetric_model, write_config, tmp_path, capsys):
    config = write_config(symmetric_model)
    assert main(['outbreak-prob', '--config', str(config), '--seed-node', '2', '--output-dir', str(tmp_path)]) == 1
    assert 'epinet:error:ModelValidationError: --seed-node' in capsys.readouterr().err


def test_simulate_writes_to_out_file(symmetric_model, write_config, tmp_path):
    config = write_config(symmetric_model, N=20)
    out = tmp_path / 'runs' / 'path.csv'
    argv = ['simulate', '--config', str(config), '--process', 'sir', '--N', '20', '--t-end', '5',
            '--seed', '3', '--stream', '2', '--out', str(out)]
    assert main(argv) == 0
    assert out.read_text().splitlines()[0] == 'time,event_kind,node_from,node_to'
    stats = json.loads((tmp_path / 'runs' / 'path.json').read_text())
    assert stats['process'] == 'sir'
    manifest = json.loads((tmp_path / 'runs' / 'path.manifest.json').read_text())
    assert manifest['outputs'] == ['path.json', 'path.csv']
    assert manifest['flags']['stream'] == 2


def test_ode_linear_and_sir_modes(endemic_model, write_config, tmp_path):
    config = write_config(endemic_model, N=100, x0=[8.0], I0=[100])
    linear = tmp_path / 'linear.csv'
    assert main(['ode', '--config', str(config), '--mode', 'linear', '--t-end', '50', '--out', str(linear)]) == 0
    flow = pd.read_csv(linear)
    assert list(flow.columns) == ['time', 'x_1']
    assert flow['x_1'].iloc[-1] == pytest.approx(10.0, abs=1e-6)

    sir = tmp_path / 'sir.csv'
    argv = ['ode', '--config', str(config), '--mode', 'sir', '--denominator', 'zstar', '--t-end', '50',
            '--out', str(sir)]
    assert main(argv) == 0
    assert list(pd.read_csv(sir).columns) == ['time', 's_1', 'i_1', 'r_1']
    report = json.loads((tmp_path / 'sir.json').read_text())
    assert report['denominator'] == 'zstar'


def test_equilibrium_denominator_flag(endemic_model, write_config, tmp_path):
    config = write_config(endemic_model)
    out = tmp_path / 'out'
    assert main(['equilibrium', '--config', str(config), '--denominator', 'zstar', '--output-dir', str(out)]) == 0
    assert json.loads((out / 'equilibrium.json').read_text())['classification'] == 'stable-endemic'


def test_exit_cost_flags(symmetric_model, write_config, tmp_path):
    config = write_config(symmetric_model)
    out = tmp_path / 'exit.csv'
    argv = ['exit-cost', '--config', str(config), '--process', 'population', '--eps', '0.5',
            '--grid', '16', '--horizon', '5', '--restarts', '1', '--out', str(out)]
    assert main(argv) == 0
    path = pd.read_csv(out)
    assert len(path) == 17
    report = json.loads((tmp_path / 'exit.json').read_text())
    assert report['grid'] == 16
    assert report['horizon'] == pytest.approx(5.0)
    assert report['action'] > 0


@pytest.mark.parametrize('argv', [
    ['analyze', '--config', 'model.json', '--no-such-flag'],
    ['simulate', '--config', 'model.json', '--process', 'telepathy'],
    ['exit-cost', '--config', 'model.json'],
    ['teleport'],
])
def test_usage_errors_exit_with_1(argv, capsys):
    assert main(argv) == 1
    assert 'epinet:error:UsageError' in capsys.readouterr().err


def test_help_exits_with_0(capsys):
    assert main(['simulate', '--help']) == 0
    text = capsys.readouterr().out
    for flag in ('--process', '--N', '--t-end', '--seed', '--stream', '--out'):
        assert flag in text


def test_ensemble_outputs_match_across_worker_counts(symmetric_model, write_config, tmp_path):
    config = write_config(symmetric_model, N=10)
    manifests = []
    for workers in (1, 8):
        out = tmp_path / f"w{workers}"
        argv = ['ensemble', '--config', str(config), '--experiment', 'stationary', '--burn-in', '20',
                '--horizon', '30', '--runs', '16', '--seed', '4', '--workers', str(workers),
                '--output-dir', str(out)]
        assert main(argv) == 0
        manifests.append(json.loads((out / 'ensemble.manifest.json').read_text()))
    for name in ('ensemble.json', 'ensemble_replicates.csv'):
        assert (tmp_path / 'w1' / name).read_bytes() == (tmp_path / 'w8' / name).read_bytes()
    assert [m['workers'] for m in manifests] == [1, 8]
    reproducible = [RunManifest(**m).reproducible_dict() for m in manifests]
    assert reproducible[0] == reproducible[1]
