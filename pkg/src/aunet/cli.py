"""Command line front end.

Subcommands: train, eval, synth, export-attn, grad-check, crf-oracle.
Run configuration comes from --config JSON plus per-flag overrides;
flags win over the file, the file wins over defaults.
"""

import argparse
import json
import sys

import numpy as np

from .config import RunConfig
from .crf import (CrfHyperParams, brute_force_marginals, build_kernels,
                  crf_energy, expected_crf_energy, mean_field)
from .data import SyntheticSpec, load_manifest, synth_generate
from .errors import OracleSizeError
from .evaluate import evaluate_model, export_attention, load_model
from .gradcheck import full_model_check, toy_config
from .imageio import read_ppm
from .tensor import Tensor
from .train import train

_BOOL_FIELDS = {
    "channel_attention", "spatial_attention", "crf_refinement",
}
_SCALAR_FIELDS = {
    "l": int, "c": int, "n": int, "T": int, "epochs": int,
    "batch_size": int, "seed": int, "base_lr": float,
    "lr_decay_factor": float, "lr_decay_every": int,
    "weight_decay": float, "momentum": float,
    "crf_loss_weight": float, "threshold": float,
}


def _onoff(value):
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return value == "on"


def _add_config_flags(p):
    p.add_argument("--config", help="JSON file with run configuration")
    for name, typ in _SCALAR_FIELDS.items():
        p.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None,
                       dest=f"cfg_{name}")
    for name in sorted(_BOOL_FIELDS):
        p.add_argument(f"--{name.replace('_', '-')}", type=_onoff, default=None,
                       dest=f"cfg_{name}", metavar="on|off")
    p.add_argument("--crop-margin", type=int, default=None)
    p.add_argument("--hflip", type=_onoff, default=None, metavar="on|off")


def _build_config(args, base=None):
    data = dict(base) if base else {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            data.update(json.load(fh))
    for name in list(_SCALAR_FIELDS) + sorted(_BOOL_FIELDS):
        val = getattr(args, f"cfg_{name}")
        if val is not None:
            data[name] = val
    aug = dict(data.get("augmentation", {}))
    if args.crop_margin is not None:
        aug["random_crop_margin"] = args.crop_margin
    if args.hflip is not None:
        aug["horizontal_flip"] = args.hflip
    if aug:
        data["augmentation"] = aug
    return RunConfig.from_dict(data)


def _cmd_train(args):
    config = _build_config(args)
    manifest = load_manifest(args.manifest)
    result = train(config, manifest, args.out,
                   resume=args.resume, init_from=args.init_from)
    print(f"wrote {result.final_path}")
    return 0


def _cmd_eval(args):
    model = load_model(args.checkpoint)
    manifest = load_manifest(args.manifest)
    report = evaluate_metrics_cli(model, manifest, args.threshold)
    text = report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        print(text)
    print(f"avg F1 {report.avg_f1:.4f}  avg accuracy {report.avg_accuracy:.4f}")
    return 0


def evaluate_metrics_cli(model, manifest, threshold):
    return evaluate_model(model, manifest, threshold=threshold)


def _cmd_synth(args):
    spec = SyntheticSpec(
        count=args.count, n=args.n, l=args.l, seed=args.seed,
        margin=args.margin, noise=args.noise,
        distractor_rate=args.distractor_rate, subjects=args.subjects,
    )
    manifest = synth_generate(spec, args.out)
    print(f"wrote {len(manifest)} images and manifest.csv under {args.out}")
    return 0


def _cmd_export_attn(args):
    model = load_model(args.checkpoint)
    image = read_ppm(args.image)
    from .data import center_crop
    image = center_crop(image, model.config.l)
    paths = export_attention(model, image, args.out)
    print(f"wrote attention maps for {len(paths)} outputs under {args.out}")
    return 0


def _cmd_grad_check(args):
    if args.config or _any_cfg_override(args):
        config = _build_config(args, base=_toy_base())
    else:
        config = toy_config()
    report = full_model_check(config, step=args.step, skip_ratio=args.skip_ratio)
    print(report.summary())
    ok = report.max_rel < args.tolerance
    print(f"grad check {'PASSED' if ok else 'FAILED'} "
          f"(tolerance {args.tolerance:g})")
    return 0 if ok else 1


def _toy_base():
    return json.loads(toy_config().to_json())


def _any_cfg_override(args):
    names = list(_SCALAR_FIELDS) + sorted(_BOOL_FIELDS)
    if any(getattr(args, f"cfg_{n}") is not None for n in names):
        return True
    return args.crop_margin is not None or args.hflip is not None


def _cmd_crf_oracle(args):
    if args.m > 16:
        raise OracleSizeError(f"brute force is limited to m <= 16, got {args.m}")
    hyper = CrfHyperParams(
        w1=args.w1, w2=args.w2, alpha=0.2 * args.m, beta=0.1,
        gamma=0.05 * args.m, T=args.T,
    )
    mu = np.array([[0.0, 1.0], [1.0, 0.0]])
    worst = 0.0
    for trial in range(args.trials):
        rng = np.random.default_rng(
            np.random.SeedSequence([args.seed, trial]))
        image = rng.uniform(0.0, 1.0, size=(1, args.m, 3))
        p1 = rng.uniform(0.05, 0.95, size=args.m)
        kern = build_kernels(image, hyper)
        big_q = mean_field(Tensor(p1), kern, Tensor(mu), hyper)
        exact = brute_force_marginals(p1, kern, mu, hyper)
        gap = float(np.max(np.abs(big_q.data[:, 1] - exact)))
        labels = (rng.random(args.m) < 0.5).astype(np.int64)
        point = np.eye(2)[labels]
        e_point = float(expected_crf_energy(
            Tensor(point), Tensor(p1), kern, Tensor(mu), hyper).data)
        e_direct = crf_energy(labels, p1, kern, mu, hyper)
        e_gap = abs(e_point - e_direct)
        worst = max(worst, gap)
        print(f"trial {trial}: marginal Linf {gap:.3e}  energy gap {e_gap:.3e}")
    print(f"worst marginal Linf over {args.trials} trials: {worst:.3e}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aunet",
        description="Facial action unit detection with attention and "
                    "pairwise refinement",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="latest.ckpt of an interrupted identical run")
    p.add_argument("--init-from", help="checkpoint to warm-start weights from")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="write the metrics JSON here instead of stdout")
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth", help="generate the synthetic blob dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--l", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--margin", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--distractor-rate", type=float, default=1.0)
    p.add_argument("--subjects", type=int, default=6)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("export-attn", help="write attention maps for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_attn)

    p = sub.add_parser("grad-check",
                       help="finite-difference check of the backward pass")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--skip-ratio", type=float, default=0.01)
    p.add_argument("--tolerance", type=float, default=1e-4)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("crf-oracle",
                       help="compare mean-field marginals against enumeration")
    p.add_argument("--m", type=int, default=6)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--w1", type=float, default=0.1)
    p.add_argument("--w2", type=float, default=0.0)
    p.add_argument("--T", type=int, default=10)
    p.set_defaults(func=_cmd_crf_oracle)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
