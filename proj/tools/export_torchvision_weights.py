#!/usr/bin/env python3
"""Export torchvision ImageNet weights to a safetensors archive efcxr can load.

    python3 tools/export_torchvision_weights.py --arch resnet50 --out resnet50_imagenet.safetensors

Tensor names are torchvision's state_dict keys, which the C++ backbones
mirror. With --random-init the weights come from torch.manual_seed(--seed)
instead of the ImageNet download, which is what the name/numerics check in
the test suite uses. --probe stores the network's first ImageNet logit on a
fixed input in the archive metadata so the C++ side can compare forward
passes.
"""
import argparse
import json

import torch
import torchvision
from safetensors.torch import save_file

ARCHES = {
    "resnet50": (torchvision.models.resnet50, torchvision.models.ResNet50_Weights.IMAGENET1K_V1),
    "densenet121": (torchvision.models.densenet121, torchvision.models.DenseNet121_Weights.IMAGENET1K_V1),
    "efficientnet_b0": (torchvision.models.efficientnet_b0, torchvision.models.EfficientNet_B0_Weights.IMAGENET1K_V1),
}


def probe_input(size=224):
    # x[c, y, x] = ((3c + 5y + 7x) mod 23) / 22; the C++ check builds the same image.
    c = torch.arange(3).view(3, 1, 1)
    y = torch.arange(size).view(1, size, 1)
    x = torch.arange(size).view(1, 1, size)
    return (((3 * c + 5 * y + 7 * x) % 23).double() / 22.0).unsqueeze(0)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--arch", required=True, choices=sorted(ARCHES))
    ap.add_argument("--out", required=True)
    ap.add_argument("--random-init", action="store_true", help="skip the download; seed the weights instead")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--probe", action="store_true", help="record logit[0] on the fixed probe input")
    args = ap.parse_args()

    ctor, weights = ARCHES[args.arch]
    if args.random_init:
        torch.manual_seed(args.seed)
        model = ctor(weights=None)
    else:
        model = ctor(weights=weights)
    model.eval()

    state = {k: v.detach().contiguous() for k, v in model.state_dict().items()}
    metadata = {"arch": args.arch, "source": "random-init" if args.random_init else str(weights)}
    if args.probe:
        with torch.no_grad():
            logit = model.double()(probe_input())[0, 0].item()
        metadata["probe_logit0"] = json.dumps(logit)
    save_file(state, args.out, metadata=metadata)
    print(f"wrote {len(state)} tensors to {args.out}")


if __name__ == "__main__":
    main()
