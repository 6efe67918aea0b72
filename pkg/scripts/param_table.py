#!/usr/bin/env python3
"""Print parameter counts of the lightweight model at x2/x3/x4 next to the published figures."""
from swinfir.model import ModelConfig, build, count_params

PUBLISHED_K = {2: 872, 3: 880, 4: 891}


def main():
    print(f"{'scale':>5} {'params':>9} {'w/ bias tables':>15} {'published':>10} {'diff %':>7}")
    for scale, ref in PUBLISHED_K.items():
        model = build(ModelConfig.lightweight(scale))
        n = count_params(model, exclude_position_bias=True)
        full = count_params(model)
        print(f"{scale:>5} {n:>9} {full:>15} {ref * 1000:>10} {100 * (n - ref * 1000) / (ref * 1000):>+7.2f}")


if __name__ == "__main__":
    main()
