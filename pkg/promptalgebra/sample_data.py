"""
Small seeded datasets and the script runner shared by the test_*.py files.
"""

import sys
import traceback

from core.data import Bundle
from core.synthetic import SyntheticSpec, generate_synthetic
from core.vlm import TextEncoder

SMALL = dict(d=16, n_objects=4, n_attributes=3, samples_per_pair=6, distractor_tokens=4, seed=0)


def small_spec(**overrides) -> SyntheticSpec:
    return SyntheticSpec(**{**SMALL, **overrides})


def small_bundle(**overrides) -> Bundle:
    spec = small_spec(**overrides)
    vocab, dataset, support, _ = generate_synthetic(spec)
    encoder = TextEncoder.create(vocab, spec.encoder_weight, spec.encoder_seed)
    return Bundle(vocab=vocab, dataset=dataset, encoder=encoder, support=support)


def run_checks(namespace: dict) -> int:
    """Run every test_* function in `namespace`, print one line each, return an exit code"""
    failed = 0
    for name, check in sorted(namespace.items()):
        if not name.startswith("test_") or not callable(check):
            continue
        try:
            check()
            print(f"✅ {name}")
        except Exception as e:
            failed += 1
            print(f"❌ {name}: {type(e).__name__}: {e}")
            traceback.print_exc(file=sys.stdout)
    if failed:
        print(f"❌ {failed} check(s) failed")
        return 1
    print("🎉 All checks passed!")
    return 0
