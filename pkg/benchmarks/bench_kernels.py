"""Compare the compiled and numpy kernel backends.

Times each hot kernel at the shapes of one 200-segment training batch, then
a full forward/backward training step under each backend.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from hct.numerics.kernels import backends

BATCH = 200 * 18  # segments x sensors: every branch runs as one conv batch


def best_of(fn, *args, repeat=5):
    fn(*args)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(rng):
    cases = []
    # (length, cin, cout) of the four conv layers of one branch
    for length, cin, cout in [(100, 1, 8), (98, 8, 16), (48, 16, 16), (46, 16, 1)]:
        x = rng.standard_normal((BATCH, length, cin)).astype(np.float32)
        w = rng.standard_normal((3, cin, cout)).astype(np.float32)
        b = rng.standard_normal(cout).astype(np.float32)
        g = rng.standard_normal((BATCH, length - 2, cout)).astype(np.float32)
        cases.append((f"conv fwd {cin:>2}->{cout:<2} L={length}", "conv1d_forward", (x, w, b)))
        cases.append((f"conv bwd {cin:>2}->{cout:<2} L={length}", "conv1d_backward", (x, w, g)))
    x = rng.standard_normal((BATCH, 96, 16)).astype(np.float32)
    cases.append(("maxpool fwd 96x16", "maxpool2_forward", (x,)))
    _, idx = backends()["python"].maxpool2_forward(x)
    g = rng.standard_normal((BATCH, 48, 16)).astype(np.float32)
    cases.append(("maxpool bwd 48x16", "maxpool2_backward", (g, idx, 96)))
    cases.append(("selu 5.6M values", "selu_forward",
                  (rng.standard_normal(BATCH * 98 * 16).astype(np.float32),)))
    return cases


STEP_SNIPPET = """
import time
import numpy as np
from hct.model import default_config, init_params
from hct.numerics import BACKEND
from hct.trainer import batch_loss
p = init_params(default_config("detection"), 0)
rng = np.random.default_rng(0)
x = rng.standard_normal((200, 18, 100)).astype(np.float32)
y = rng.integers(0, 2, 200)
batch_loss(p, x, y)
t = time.perf_counter()
for _ in range({repeat}):
    batch_loss(p, x, y, np.random.default_rng(1))
print(BACKEND, (time.perf_counter() - t) / {repeat})
"""


def train_step_time(backend, repeat):
    env = dict(os.environ, HCT_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=repeat)],
                         env=env, capture_output=True, text=True, check=True)
    name, seconds = out.stdout.split()
    return name, float(seconds)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    mods = backends()
    if "cython" not in mods:
        print("compiled kernels not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    names = list(mods)
    print(f"{'kernel':<28}" + "".join(f"{n:>10}" for n in names) + "   speedup")
    for label, fn, inputs in kernel_cases(rng):
        times = [best_of(getattr(mods[n], fn), *inputs, repeat=args.repeat) for n in names]
        ratio = f"{times[0] / times[1]:8.2f}x" if len(times) > 1 else ""
        print(f"{label:<28}" + "".join(f"{t * 1e3:9.1f}ms" for t in times) + "  " + ratio)
    print()
    print("full forward+backward step, batch 200 (routed kernels, per backend):")
    for backend in ("python", "cython"):
        if backend not in mods:
            continue
        name, seconds = train_step_time(backend, max(1, args.repeat // 2))
        print(f"  {name:<8} {seconds:.3f} s")


if __name__ == "__main__":
    main()
