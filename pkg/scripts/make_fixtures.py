"""Regenerate the shipped catalog and device fixtures.

The per-block tables are synthetic: parameter counts and FLOPs follow the
published totals of each architecture, split over ten blocks along the
stage structure (light stem, parameter-heavy late stages, FLOP-light head).
"""

import argparse
from pathlib import Path

import numpy as np

from slidesim.profiles import (DeviceProfile, LayerProfile, ModelProfile, dump_catalog,
                               dump_devices)

# name -> (params, FLOPs per sample, base accuracy, kind)
ARCHS = {
    "resnet18": (11.7e6, 1.8e9, 0.86, "cnn"),
    "resnet34": (21.8e6, 3.6e9, 0.89, "cnn"),
    "resnet50": (25.6e6, 4.1e9, 0.92, "cnn"),
    "deit_s": (22.0e6, 4.6e9, 0.93, "vit"),
}
# tag -> (bits per parameter, workload multiplier, accuracy drop); int8 is
# weight-only quantization, so weights are dequantized to fp16 on the fly and
# the smallest download is not the cheapest to run
PRECISIONS = {"fp32": (32, 1.0, 0.0), "fp16": (16, 0.55, 0.003), "int8": (8, 0.7, 0.02)}
DOMAINS = {"cls": 0.0, "det": -0.01, "seg": 0.01, "pose": -0.02}

# stem, two blocks per stage, classifier head
CNN_PARAMS = {
    "resnet18": [0.0008, 0.0065, 0.0065, 0.0225, 0.0225, 0.09, 0.09, 0.36, 0.36, 0.044],
    "resnet34": [0.0004, 0.01, 0.01, 0.0255, 0.0255, 0.1, 0.1, 0.3, 0.3, 0.023],
    "resnet50": [0.0004, 0.005, 0.005, 0.027, 0.027, 0.14, 0.14, 0.29, 0.29, 0.08],
}
CNN_FLOPS = [0.065, 0.115, 0.115, 0.11, 0.11, 0.11, 0.11, 0.11, 0.11, 0.002]
# patch embedding, eight groups of encoder blocks, head
VIT_PARAMS = [0.013] + [0.121] * 8 + [0.017]
VIT_FLOPS = [0.02] + [0.122] * 8 + [0.0001]


def block_shares(arch, kind):
    params = np.array(CNN_PARAMS[arch] if kind == "cnn" else VIT_PARAMS)
    flops = np.array(CNN_FLOPS if kind == "cnn" else VIT_FLOPS)
    return params / params.sum(), flops / flops.sum()


def build_catalog():
    models = []
    for domain, acc_shift in DOMAINS.items():
        for arch, (params, flops, acc, kind) in ARCHS.items():
            p_share, f_share = block_shares(arch, kind)
            for tag, (bits, work_mult, drop) in PRECISIONS.items():
                layers = tuple(
                    LayerProfile(i + 1, float(round(params * bits * p)),
                                 float(round(flops * work_mult * f)))
                    for i, (p, f) in enumerate(zip(p_share, f_share)))
                models.append(ModelProfile(f"{domain}-{arch}-{tag}", layers, tag,
                                           round(acc + acc_shift - drop, 4)))
    return models


def build_devices():
    nx_f, nano_f = 918e6, 624.75e6
    return {
        "nx": DeviceProfile("nx", nx_f, 0.035, 10.0 / nx_f ** 3, 6.4e10, 0.04, 0.05, 10.0),
        "nano": DeviceProfile("nano", nano_f, 0.07, 5.0 / nano_f ** 3, 3.2e10, 0.05, 0.05, 5.0),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", type=Path,
                    default=Path(__file__).resolve().parents[1] / "src" / "slidesim" / "data")
    args = ap.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    dump_catalog(build_catalog(), args.out_dir / "catalog.json")
    dump_devices(build_devices(), args.out_dir / "devices.json")


if __name__ == "__main__":
    main()
