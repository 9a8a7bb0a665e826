#!/usr/bin/env python3
"""Export torchvision backbone weights to the fiqa named-tensor archive.

Typical use, fetching ImageNet checkpoints (needs network access):

    python3 tools/export_torchvision.py --arch mobilenet_v3_small --pretrained \
        --out weights/mobilenet_v3_small.fiqa
    python3 tools/export_torchvision.py --arch shufflenet_v2_x0_5 --pretrained \
        --out weights/shufflenet_v2_x0_5.fiqa

With --reference, also writes a parity fixture (random weights, random BN
statistics, a random input batch, eval features, and train-mode gradients of
sum(features * R)) used by the C++ parity test.
"""

import argparse
import os
import struct
import sys

import numpy as np
import torch
import torchvision

MAGIC = b"FIQATNSR"
VERSION = 1


def canonical_dims(shape):
    dims = list(shape)
    while len(dims) > 1 and dims[-1] == 1:
        dims.pop()
    return dims


def write_archive(path, tensors):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for name, value in tensors:
            arr = np.ascontiguousarray(value.detach().cpu().numpy(), dtype="<f4")
            dims = canonical_dims(arr.shape) if arr.ndim else [1]
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", len(dims)))
            f.write(struct.pack("<%dq" % len(dims), *dims))
            f.write(arr.tobytes())


def build(arch, pretrained):
    weights = "DEFAULT" if pretrained else None
    if arch == "mobilenet_v3_small":
        model = torchvision.models.mobilenet_v3_small(weights=weights)
        trunk = lambda x: model.avgpool(model.features(x))
        keep = lambda k: k.startswith("features.")
    elif arch == "shufflenet_v2_x0_5":
        model = torchvision.models.shufflenet_v2_x0_5(weights=weights)

        def trunk(x):
            x = model.maxpool(model.conv1(x))
            x = model.stage4(model.stage3(model.stage2(x)))
            return model.conv5(x).mean([2, 3], keepdim=True)

        keep = lambda k: not k.startswith("fc.")
    else:
        raise SystemExit("unknown arch " + arch)
    return model, trunk, keep


def backbone_state(model, keep):
    return [(k, v) for k, v in model.state_dict().items()
            if keep(k) and not k.endswith("num_batches_tracked")]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--arch", required=True,
                    choices=["mobilenet_v3_small", "shufflenet_v2_x0_5"])
    ap.add_argument("--out", required=True, help="weight archive to write")
    ap.add_argument("--pretrained", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reference", help="also write a parity fixture archive here")
    ap.add_argument("--height", type=int, default=96)
    ap.add_argument("--width", type=int, default=64)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    model, trunk, keep = build(args.arch, args.pretrained)

    if args.reference:
        gen = torch.Generator().manual_seed(args.seed + 1)
        with torch.no_grad():
            for m in model.modules():
                if isinstance(m, torch.nn.BatchNorm2d):
                    m.running_mean.copy_(torch.randn(m.num_features, generator=gen) * 0.1)
                    m.running_var.copy_(torch.rand(m.num_features, generator=gen) + 0.5)
                    m.weight.copy_(torch.rand(m.num_features, generator=gen) + 0.5)
                    m.bias.copy_(torch.randn(m.num_features, generator=gen) * 0.1)

    for path in (args.out, args.reference):
        if path and os.path.dirname(path):
            os.makedirs(os.path.dirname(path), exist_ok=True)
    write_archive(args.out, backbone_state(model, keep))

    if not args.reference:
        return 0

    gen = torch.Generator().manual_seed(args.seed + 2)
    x = torch.randn(2, 3, args.height, args.width, generator=gen)
    model.eval()
    with torch.no_grad():
        eval_features = trunk(x)

    model.train()
    xg = x.clone().requires_grad_(True)
    train_features = trunk(xg)
    r = torch.randn(train_features.shape, generator=gen)
    (train_features * r).sum().backward()

    fixture = [("input", x), ("eval_features", eval_features),
               ("train_features", train_features), ("R", r), ("grad_input", xg.grad)]
    for name, p in model.named_parameters():
        if keep(name):
            fixture.append(("grad." + name, p.grad))
    for name, b in model.named_buffers():
        if keep(name) and not name.endswith("num_batches_tracked"):
            fixture.append(("after_train." + name, b))
    write_archive(args.reference, fixture)
    return 0


if __name__ == "__main__":
    sys.exit(main())
