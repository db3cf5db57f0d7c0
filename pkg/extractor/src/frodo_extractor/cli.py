"""Command-line entry point for activation extraction."""

import logging

import click

from .extract import extract


@click.command()
@click.option("--images", "image_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", default=None, type=click.Path(exists=True),
              help="ResNet-50 checkpoint; defaults to ImageNet weights.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--limit", default=None, type=int)
@click.option("--batch-size", default=8, show_default=True, type=int)
@click.option("--device", default="auto", show_default=True)
def main(image_dir, checkpoint, out_dir, limit, batch_size, device):
    """Dump per-layer activations and probabilities for a directory of images."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    manifest = extract(
        image_dir,
        out_dir,
        checkpoint=checkpoint,
        limit=limit,
        batch_size=batch_size,
        device=device,
    )
    click.echo(f"manifest written to {manifest} (labels are 'unlabeled'; edit before fitting)")


if __name__ == "__main__":
    main()
