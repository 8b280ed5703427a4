"""Multi-task face attribute network.

A shared convolution/pooling trunk feeds three identically shaped
fully connected branches (expression / identity / gender). The condition
vector that drives the generator is a bias-free linear projection of the
three concatenated penultimate branch activations, trained jointly with
the classification heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .data import N_EXPRESSION_CLASSES, N_GENDER_CLASSES, ImageSample


@dataclass
class ExtractorConfig:
    n_identities: int
    trunk_channels: tuple[int, ...] = (64, 128, 256, 512)
    shared_depth: int = 14  # conv + pool layers in the shared trunk
    head_fc_width: int = 512
    condition_dim: int = 128
    image_size: int = 128

    def __post_init__(self):
        if self.n_identities <= 0 or self.head_fc_width <= 0 or self.condition_dim <= 0:
            raise ValueError("all extractor sizes must be positive")
        if not self.trunk_channels or any(c <= 0 for c in self.trunk_channels):
            raise ValueError("trunk_channels must be positive")
        n_stages = len(self.trunk_channels)
        if self.shared_depth < 2 * n_stages:
            raise ValueError(
                f"shared_depth {self.shared_depth} too small for {n_stages} stages "
                "(need at least one conv plus one pool per stage)"
            )
        if self.image_size % (2**n_stages) != 0:
            raise ValueError("image_size must be divisible by 2**n_stages")
        if self.condition_dim > 3 * self.head_fc_width:
            raise ValueError("condition_dim cannot exceed 3 * head_fc_width")

    def convs_per_stage(self) -> list[int]:
        """Split shared_depth into per-stage conv counts (one pool each);
        extra convs go to the deeper stages."""
        n_stages = len(self.trunk_channels)
        total_convs = self.shared_depth - n_stages
        base, rem = divmod(total_convs, n_stages)
        return [base + (1 if i >= n_stages - rem else 0) for i in range(n_stages)]

    @property
    def head_dims(self) -> tuple[int, int, int]:
        return (N_EXPRESSION_CLASSES, self.n_identities, N_GENDER_CLASSES)


@dataclass
class ExtractorOutput:
    expression_logits: np.ndarray
    identity_logits: np.ndarray
    gender_logits: np.ndarray
    condition: np.ndarray


class MultiTaskExtractor(nn.Module):
    def __init__(self, config: ExtractorConfig):
        super().__init__()
        self.config = config
        layers: list[nn.Module] = []
        in_ch = 1
        for n_convs, out_ch in zip(config.convs_per_stage(), config.trunk_channels):
            for _ in range(n_convs):
                layers += [nn.Conv2d(in_ch, out_ch, 3, padding=1), nn.ReLU(inplace=True)]
                in_ch = out_ch
            layers.append(nn.MaxPool2d(2))
        self.trunk = nn.Sequential(*layers)

        feat_size = config.image_size // (2 ** len(config.trunk_channels))
        flat_dim = config.trunk_channels[-1] * feat_size * feat_size
        w = config.head_fc_width
        self.branch_bodies = nn.ModuleList(
            nn.Sequential(nn.Linear(flat_dim, w), nn.ReLU(inplace=True),
                          nn.Linear(w, w), nn.ReLU(inplace=True))
            for _ in range(3)
        )
        self.branch_outs = nn.ModuleList(nn.Linear(w, d) for d in config.head_dims)
        # Bias-free so the projection is exactly linear in the activations.
        self.condition_proj = nn.Linear(3 * w, config.condition_dim, bias=False)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """x: (B, 1, H, W) -> (expression, identity, gender logits, condition)."""
        h = self.trunk(x).flatten(1)
        penultimates = [body(h) for body in self.branch_bodies]
        logits = [out(p) for out, p in zip(self.branch_outs, penultimates)]
        condition = self.condition_proj(torch.cat(penultimates, dim=1))
        return logits[0], logits[1], logits[2], condition


def build_extractor(config: ExtractorConfig, seed: int = 0) -> MultiTaskExtractor:
    torch.manual_seed(seed)
    return MultiTaskExtractor(config)


def _pixels_to_batch(pixels, device=None, dtype=None) -> torch.Tensor:
    arr = np.asarray(pixels, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected (H, W) or (B, H, W) pixels, got shape {arr.shape}")
    t = torch.from_numpy(arr).unsqueeze(1)
    if dtype is not None:
        t = t.to(dtype)
    return t.to(device) if device is not None else t


def _images_to_tensors(dataset: list[ImageSample]) -> tuple[torch.Tensor, torch.Tensor]:
    pixels = np.stack([img.pixels for img in dataset]).astype(np.float32)
    labels = np.array(
        [[img.attributes.expression, img.attributes.identity, img.attributes.gender] for img in dataset],
        dtype=np.int64,
    )
    return torch.from_numpy(pixels).unsqueeze(1), torch.from_numpy(labels)


def extractor_forward(model: MultiTaskExtractor, pixels) -> ExtractorOutput:
    """Run one image through the (frozen) network."""
    size = model.config.image_size
    arr = np.asarray(pixels)
    if arr.shape != (size, size):
        raise ValueError(f"expected a {size}x{size} image, got {arr.shape}")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            p = next(model.parameters())
            e, i, g, c = model(_pixels_to_batch(arr, device=p.device, dtype=p.dtype))
    finally:
        model.train(was_training)
    return ExtractorOutput(
        e[0].cpu().numpy(), i[0].cpu().numpy(), g[0].cpu().numpy(), c[0].cpu().numpy()
    )


def extract_conditions(model: MultiTaskExtractor, images, batch_size: int = 64) -> np.ndarray:
    """Condition vectors for a list of ImageSamples (or an array of pixel
    grids); row i corresponds to image i."""
    if isinstance(images, (list, tuple)) and images and isinstance(images[0], ImageSample):
        pixels = np.stack([img.pixels for img in images])
    else:
        pixels = np.asarray(images)
        if pixels.ndim == 2:
            pixels = pixels[None]
    was_training = model.training
    model.eval()
    chunks = []
    try:
        with torch.no_grad():
            p = next(model.parameters())
            for start in range(0, len(pixels), batch_size):
                batch = _pixels_to_batch(pixels[start : start + batch_size], device=p.device, dtype=p.dtype)
                chunks.append(model(batch)[3].cpu().numpy())
    finally:
        model.train(was_training)
    return np.concatenate(chunks, axis=0)


def train_extractor(
    model: MultiTaskExtractor,
    dataset: list[ImageSample],
    epochs: int,
    lr: float,
    batch_size: int = 32,
    seed: int = 0,
) -> tuple[MultiTaskExtractor, list[float]]:
    """Minimize the sum of the three head cross-entropies with Adam.

    Returns the trained model and one mean loss per epoch. Shuffling is
    driven by ``seed``, so identical calls produce identical parameters.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    x_all, y_all = _images_to_tensors(dataset)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    ce = nn.CrossEntropyLoss()
    rng = np.random.default_rng(seed)
    history = []
    model.train()
    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        epoch_losses = []
        for start in range(0, len(dataset), batch_size):
            idx = order[start : start + batch_size]
            xb, yb = x_all[idx], y_all[idx]
            e, i, g, _ = model(xb)
            loss = ce(e, yb[:, 0]) + ce(i, yb[:, 1]) + ce(g, yb[:, 2])
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))
        history.append(float(np.mean(epoch_losses)))
    model.eval()
    return model, history


def head_accuracies(model: MultiTaskExtractor, dataset: list[ImageSample]) -> tuple[float, float, float]:
    """Classification accuracy of the three heads over a dataset."""
    x_all, y_all = _images_to_tensors(dataset)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            e, i, g, _ = model(x_all)
    finally:
        model.train(was_training)
    accs = []
    for logits, col in ((e, 0), (i, 1), (g, 2)):
        accs.append(float((logits.argmax(dim=1) == y_all[:, col]).float().mean()))
    return tuple(accs)
