import json
import os
import subprocess
import sys

import yaml

from ns2d.bench import read_report
from ns2d.cli import main


def run_cli(*argv):
    proc = subprocess.run([sys.executable, '-m', 'ns2d.cli', *argv],
                          capture_output=True, text=True)
    return proc.returncode, proc.stdout, proc.stderr


def test_run_subcommand(tmp_path):
    out = str(tmp_path)
    code, stdout, stderr = run_cli(
        'run', '--benchmark', 'kovasznay', '--scheme', 'dg-n', '--k', '1',
        '--nx', '4', '--gamma', '10', '--out', out)
    assert code == 0, stderr
    assert 'err_u=' in stdout and 'kovasznay' in stdout
    meta = json.load(open(os.path.join(out, 'run.json')))
    assert meta['status'] == 'ok'
    assert meta['gamma'] == 10.0


def test_run_subcommand_reports_failure(tmp_path):
    # an invalid parameter combination exits nonzero with a message
    code, stdout, stderr = run_cli(
        'run', '--benchmark', 'kovasznay', '--scheme', 'h1', '--eta',
        '12', '--nx', '4', '--out', str(tmp_path))
    assert code == 1
    assert 'run failed' in stderr


def test_run_requires_known_benchmark(tmp_path):
    code, stdout, stderr = run_cli(
        'run', '--benchmark', 'channel', '--out', str(tmp_path))
    assert code == 2


def test_study_subcommand(tmp_path):
    out = str(tmp_path)
    cfg = {'benchmark': 'kovasznay', 'scheme': 'dg-n', 'ks': [1],
           'nxs': [4, 8], 'gamma': 10.0, 'out': out}
    cfg_path = os.path.join(out, 'study.yaml')
    with open(cfg_path, 'w') as fh:
        yaml.safe_dump(cfg, fh)
    code, stdout, stderr = run_cli('study', '--config', cfg_path)
    assert code == 0, stderr
    assert 'k=1 nx=8' in stdout
    rows, meta = read_report(os.path.join(out, 'report.csv'))
    assert len(rows) == 2
    assert meta['benchmark'] == 'kovasznay'
    assert rows[1]['order_u'] is not None


def test_study_sweep_mode(tmp_path):
    out = str(tmp_path)
    cfg = {'benchmark': 'kovasznay', 'scheme': 'dg-n', 'k': 1, 'nx': 4,
           'sweep': 'gamma', 'gammas': [0.0, 10.0], 'out': out}
    cfg_path = os.path.join(out, 'sweep.yaml')
    with open(cfg_path, 'w') as fh:
        yaml.safe_dump(cfg, fh)
    code, stdout, stderr = run_cli('study', '--config', cfg_path)
    assert code == 0, stderr
    assert 'trend' in stdout
    lines = open(os.path.join(out, 'report.csv')).read().strip().split('\n')
    assert lines[0].startswith('# {')
    assert lines[1] == 'gamma,err_u,seconds'
    assert len(lines) == 4
    g, eu, sec = (float(v) for v in lines[2].split(','))
    assert g == 0.0 and eu > 0


def test_study_failure_exit_code(tmp_path):
    out = str(tmp_path)
    cfg = {'benchmark': 'kovasznay', 'scheme': 'dg-n', 'ks': [1],
           'nxs': [2, 4], 'gamma': 10.0, 'newton_tol': 0.0, 'out': out}
    cfg_path = os.path.join(out, 'bad.yaml')
    with open(cfg_path, 'w') as fh:
        yaml.safe_dump(cfg, fh)
    code, stdout, stderr = run_cli('study', '--config', cfg_path)
    assert code == 1
    assert 'failed' in stdout


def test_main_callable_directly(tmp_path):
    # the entry point is importable and usable without a subprocess
    out = str(tmp_path)
    code = main(['run', '--benchmark', 'kovasznay', '--k', '0', '--nx',
                 '4', '--gamma', '10', '--out', out])
    assert code == 0
    assert os.path.exists(os.path.join(out, 'run.json'))
