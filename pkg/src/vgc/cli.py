"""Command-line interface: train, encode, decode, eval, sweep.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 malformed
stream/image/checkpoint, 5 architecture (config hash) mismatch.

The --checkpoint option accepts a bare filename, which is resolved inside
$VGC_CHECKPOINT_DIR when that variable is set.
"""

from __future__ import annotations

import csv
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import bitstream, codec, images
from .errors import ConfigMismatchError, DecodeError, UnsupportedFormatError, VgcError
from .metrics import MsSsimConfig, max_scales_for_extent, ms_ssim, psnr
from .network import BLOCK_VARIANTS, CodecConfig
from .trainer import TrainConfig, Trainer, load_codec, load_dataset, save_checkpoint

EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_CONFIG = 5


def _fail(code: int, err: Exception):
    click.echo(f"error: {err}", err=True)
    sys.exit(code)


def _guarded(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigMismatchError as e:
            _fail(EXIT_CONFIG, e)
        except (DecodeError, UnsupportedFormatError) as e:
            _fail(EXIT_FORMAT, e)
        except (OSError, VgcError) as e:
            _fail(EXIT_IO, e)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _resolve_checkpoint(path: str) -> str:
    p = Path(path)
    if not p.exists() and p.parent == Path(".") :
        base = os.environ.get("VGC_CHECKPOINT_DIR")
        if base:
            candidate = Path(base) / p
            if candidate.exists():
                return str(candidate)
    return str(p)


def _parse_rates(text: str):
    try:
        rates = tuple(int(t) for t in text.split(",") if t)
    except ValueError:
        raise click.BadParameter(f"cannot parse rate set {text!r}")
    if not rates:
        raise click.BadParameter("rate set is empty")
    return rates


@click.group()
def main():
    """Variable-rate learned image codec."""


@main.command()
@click.option("--dataset", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(), help="checkpoint file")
@click.option("--epochs", default=30, show_default=True)
@click.option("--batch-size", default=16, show_default=True)
@click.option("--patch", default=64, show_default=True)
@click.option("--width", default=32, show_default=True, help="hidden channels")
@click.option("--alpha-c", default=8, show_default=True, help="code-map channels")
@click.option("--block-variant", default="ResGDN", show_default=True,
              type=click.Choice(BLOCK_VARIANTS))
@click.option("--rates", default="2,4,8", show_default=True,
              help="comma-separated quantizer bit depths")
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--log", type=click.Path(), default=None, help="CSV training log")
@_guarded
def train(dataset, out, epochs, batch_size, patch, width, alpha_c,
          block_variant, rates, lr, seed, log):
    """Train a codec on a directory of PNG/PPM images."""
    codec_cfg = CodecConfig(alpha_c=alpha_c, hidden_width=width,
                            block_variant=block_variant)
    train_cfg = TrainConfig(
        rates=_parse_rates(rates), epochs=epochs, batch_size=batch_size,
        learning_rate=lr, patch=patch, seed=seed,
        ms_scales=min(3, max_scales_for_extent(patch)),
    )
    ds = load_dataset(dataset, patch=patch, seed=seed)
    trainer = Trainer(codec_cfg, train_cfg)
    click.echo(
        f"training on {len(ds)} images, {ds.batches_per_epoch(batch_size)} "
        f"batches/epoch, rates {train_cfg.rates}"
    )
    history = trainer.fit(ds, log_path=log)
    save_checkpoint(out, trainer)
    cfg_path = Path(str(out) + ".cfg")
    cfg_path.write_text(codec_cfg.canonical_text() + "\n")
    click.echo(f"final loss {history[-1].loss:.4f}; checkpoint written to {out}")
    click.echo(f"architecture {codec_cfg.digest().hex()} ({cfg_path})")


@main.command()
@click.argument("image", type=click.Path())
@click.option("--checkpoint", required=True)
@click.option("--bits", "-B", default=4, show_default=True)
@click.option("--qp", default=25, show_default=True,
              help="enhancement-layer quality (1 = finest)")
@click.option("--no-enhancement", is_flag=True)
@click.option("--out", required=True, type=click.Path())
@_guarded
def encode(image, checkpoint, bits, qp, no_enhancement, out):
    """Compress IMAGE into a .vgc stream."""
    if not 1 <= bits <= 8:
        raise click.BadParameter("--bits must be in [1, 8]")
    enc, dec, _ = load_codec(_resolve_checkpoint(checkpoint))
    img = images.load_image(image)
    data = codec.encode_image(img, enc, dec, bits=bits, qp=qp,
                              with_enhancement=not no_enhancement)
    Path(out).write_bytes(data)
    rep = bitstream.bpp_report(data, img.shape[0], img.shape[1])
    click.echo(
        f"{out}: {len(data)} bytes, {rep['bpp']:.4f} bpp "
        f"(base {rep['bpp_base']:.4f}, enhancement {rep['bpp_enhancement']:.4f})"
    )


@main.command()
@click.argument("stream", type=click.Path())
@click.option("--checkpoint", required=True)
@click.option("--out", required=True, type=click.Path())
@_guarded
def decode(stream, checkpoint, out):
    """Decompress a .vgc STREAM back to an image."""
    _, dec, _ = load_codec(_resolve_checkpoint(checkpoint))
    data = Path(stream).read_bytes()
    img = codec.decode_image(data, dec)
    images.save_image(out, img)
    click.echo(f"{out}: {img.shape[1]}x{img.shape[0]}")


def _evaluate_one(img, enc, dec, bits, qp, enhancement, ms_scales):
    data = codec.encode_image(img, enc, dec, bits=bits, qp=qp,
                              with_enhancement=enhancement)
    recon = codec.decode_image(data, dec)
    rep = bitstream.bpp_report(data, img.shape[0], img.shape[1])
    x = img.astype(np.float64).transpose(2, 0, 1)[None]
    y = recon.astype(np.float64).transpose(2, 0, 1)[None]
    cfg = MsSsimConfig(scales=ms_scales, data_range=255.0)
    return {
        "bpp": rep["bpp"],
        "bpp_base_frac": rep["base_fraction"],
        "psnr_db": psnr(x, y, peak=255.0),
        "ms_ssim": ms_ssim(x, y, cfg),
    }


@main.command(name="eval")
@click.argument("image_paths", nargs=-1, required=True, type=click.Path())
@click.option("--checkpoint", required=True)
@click.option("--bits", "-B", default=4, show_default=True)
@click.option("--qp", default=25, show_default=True)
@click.option("--no-enhancement", is_flag=True)
@click.option("--ms-scales", default=5, show_default=True)
@click.option("--out", default="-", show_default=True, help="CSV path or - for stdout")
@_guarded
def eval_cmd(image_paths, checkpoint, bits, qp, no_enhancement, ms_scales, out):
    """Rate/quality metrics for IMAGE_PATHS at one operating point."""
    enc, dec, _ = load_codec(_resolve_checkpoint(checkpoint))
    handle = sys.stdout if out == "-" else open(out, "w", newline="")
    try:
        writer = csv.writer(handle)
        writer.writerow(["image", "bpp", "psnr_db", "ms_ssim"])
        for path in image_paths:
            img = images.load_image(path)
            m = _evaluate_one(img, enc, dec, bits, qp, not no_enhancement,
                              ms_scales)
            writer.writerow([path, f"{m['bpp']:.6f}", f"{m['psnr_db']:.4f}",
                             f"{m['ms_ssim']:.6f}"])
    finally:
        if handle is not sys.stdout:
            handle.close()


def _parse_points(text: str):
    points = []
    try:
        for part in text.split(","):
            if not part:
                continue
            b, qp = part.split(":")
            points.append((int(b), int(qp)))
    except ValueError:
        raise click.BadParameter(
            f"cannot parse sweep points {text!r}; expected B:qp,B:qp,..."
        )
    if not points:
        raise click.BadParameter("no sweep points given")
    for b, qp in points:
        if not 1 <= b <= 8:
            raise click.BadParameter(f"bit depth {b} outside [1, 8]")
        if not 1 <= qp <= 51:
            raise click.BadParameter(f"qp {qp} outside [1, 51]")
    return points


@main.command()
@click.argument("image_paths", nargs=-1, required=True, type=click.Path())
@click.option("--checkpoint", required=True)
@click.option("--points", default="3:50,4:40,5:35,6:30,7:25", show_default=True,
              help="comma-separated B:qp operating points")
@click.option("--no-enhancement", is_flag=True)
@click.option("--ms-scales", default=5, show_default=True)
@click.option("--out", required=True, type=click.Path())
@_guarded
def sweep(image_paths, checkpoint, points, no_enhancement, ms_scales, out):
    """Rate-distortion sweep; one row per point per image plus averages."""
    pts = _parse_points(points)
    enc, dec, _ = load_codec(_resolve_checkpoint(checkpoint))
    with open(out, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["point_id", "B", "qp", "bpp", "bpp_base_frac", "psnr_db", "ms_ssim"]
        )
        for i, (bits, qp) in enumerate(pts):
            pid = f"p{i}"
            acc = []
            for path in image_paths:
                try:
                    img = images.load_image(path)
                    m = _evaluate_one(img, enc, dec, bits, qp,
                                      not no_enhancement, ms_scales)
                except Exception as e:  # failed point: mark row, keep going
                    click.echo(f"point {pid} failed on {path}: {e}", err=True)
                    writer.writerow([pid, bits, qp, "failed", "failed",
                                     "failed", "failed"])
                    continue
                acc.append(m)
                writer.writerow([
                    pid, bits, qp, f"{m['bpp']:.6f}",
                    f"{m['bpp_base_frac']:.6f}", f"{m['psnr_db']:.4f}",
                    f"{m['ms_ssim']:.6f}",
                ])
            if acc:
                writer.writerow([
                    f"{pid}_avg", bits, qp,
                    f"{np.mean([m['bpp'] for m in acc]):.6f}",
                    f"{np.mean([m['bpp_base_frac'] for m in acc]):.6f}",
                    f"{np.mean([m['psnr_db'] for m in acc]):.4f}",
                    f"{np.mean([m['ms_ssim'] for m in acc]):.6f}",
                ])
    click.echo(f"sweep written to {out}")


if __name__ == "__main__":
    main()
