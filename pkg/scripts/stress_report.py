import os
import sys

# Ensure project root is importable when running from scripts/
CURRENT_DIR = os.path.dirname(__file__)
PROJECT_ROOT = os.path.abspath(os.path.join(CURRENT_DIR, os.pardir))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from config import parse_config  # noqa: E402
from dynamics import simulate  # noqa: E402
from logging_config import setup_logging  # noqa: E402
from postprocess import debonding_report, stress_field, stress_summary  # noqa: E402

LEVEL = 5
STEPS = 100

RUNS = [
    ('fig1', 'inviscid-impermeable'),
    ('fig1', 'inviscid-permeable'),
    ('fig2', 'inviscid-permeable'),
]


def run(preset: str, variant: str) -> dict:
    config = parse_config(overrides={'preset': preset, 'variant': variant, 'level': LEVEL, 'n_steps': STEPS})
    result = simulate(config)
    field = stress_field(result.final, result.previous, result.moduli, config, result.mesh)
    summary = stress_summary(field, result.mesh)
    summary['debond'] = debonding_report(field, result.mesh, config.params).verdict.value
    return summary


def edge_concentration_report(results: dict):
    print('STRESS CONCENTRATION (syy):')
    for (preset, variant), s in results.items():
        ok = s['syy_max_abs_gamma0'] >= s['syy_max_abs_interior']
        print(f" - {preset} {variant}: edge max={s['syy_max_abs_gamma0']:.4e}, "
              f"interior max={s['syy_max_abs_interior']:.4e} -> {'OK' if ok else 'NOT AT EDGE'}")
    print()


def permeability_report(results: dict):
    imp = results[('fig1', 'inviscid-impermeable')]['syy_median_abs_interior']
    perm = results[('fig1', 'inviscid-permeable')]['syy_median_abs_interior']
    print('IMPERMEABLE VS PERMEABLE (fig1, interior median |syy|):')
    print(f" - impermeable={imp:.4e}, permeable={perm:.4e} -> {'OK' if imp > perm else 'UNEXPECTED'}")
    print()


def debond_report(results: dict):
    print('DEBONDING:')
    for (preset, variant), s in results.items():
        print(f" - {preset} {variant}: {s['debond']}")
    print()


if __name__ == '__main__':
    setup_logging(console_only=True, level='WARNING')
    results = {key: run(*key) for key in RUNS}
    edge_concentration_report(results)
    permeability_report(results)
    debond_report(results)
