"""Python surface of the dual-stream reflection separation core."""

from _dsrnet import (  # noqa: F401
    DsrNet,
    aggregate,
    exclusion_loss,
    mugi_gate,
    pixel_loss,
    psnr,
    r3_loss,
    sample_gammas,
    screen_blend,
    ssim,
)

__all__ = [
    "DsrNet",
    "aggregate",
    "exclusion_loss",
    "mugi_gate",
    "pixel_loss",
    "psnr",
    "r3_loss",
    "sample_gammas",
    "screen_blend",
    "ssim",
]
