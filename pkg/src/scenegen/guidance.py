"""Score-distillation guidance against an inpainting denoiser.

Each step crops the current render around the box silhouette, perturbs it to
a random diffusion timestep, and asks a provider for the predicted noise
conditioned on the prompt, the masked scene context and the mask.  The
distillation gradient w(t) * (eps_hat - eps) is pasted back into image space
and injected through a surrogate loss whose image gradient equals it.

Providers are callables GuidanceRequest -> float32 (s, s, 3) noise
prediction.  ``TargetOracleProvider`` is a deterministic stand-in whose
fixed point is a known target image (it reconstructs the clean crop from the
request seed, so no state crosses the wire); ``HttpProvider`` speaks the
multipart HTTP contract to a remote denoiser, and ``create_provider_app``
exposes any provider under that same contract for tests and demos.
"""

import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ProviderError, ValidationError
from .seeding import child_seed, rng, standard_normal

NOISY_RANGE = (-5.0, 5.0)
UNIT_RANGE = (0.0, 1.0)


# ---------------------------------------------------------------------------
# Diffusion schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta DDPM schedule with a restricted sampling band."""

    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    t_min_frac: float = 0.02
    t_max_frac: float = 0.98

    def __post_init__(self):
        if self.steps < 2:
            raise ValidationError("schedule needs at least 2 steps")
        if not 0 <= self.t_min_frac < self.t_max_frac <= 1:
            raise ValidationError("timestep band must satisfy 0 <= lo < hi <= 1")

    @cached_property
    def alphas_cumprod(self) -> np.ndarray:
        betas = np.linspace(self.beta_start, self.beta_end, self.steps,
                            dtype=np.float64)
        return np.cumprod(1.0 - betas)

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t < self.steps:
            raise ValidationError(f"timestep {t} outside [0, {self.steps})")
        return float(self.alphas_cumprod[t])

    @property
    def t_range(self) -> tuple:
        lo = int(math.ceil(self.steps * self.t_min_frac))
        hi = int(math.floor(self.steps * self.t_max_frac))
        return lo, hi

    def sample_timestep(self, generator: np.random.Generator) -> int:
        lo, hi = self.t_range
        return int(generator.integers(lo, hi))

    def weight(self, t: int) -> float:
        """Per-timestep gradient weight w(t) = 1 - alpha_bar(t)."""
        return 1.0 - self.alpha_bar(t)


# ---------------------------------------------------------------------------
# Crop geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CropWindow:
    """Square image window fed to the provider after resize to out_size."""

    left: int
    top: int
    size: int
    out_size: int

    def to_dict(self):
        return {"left": self.left, "top": self.top, "size": self.size,
                "out_size": self.out_size}


def compute_crop_window(mask: np.ndarray, margin: float = 1.25,
                        out_size: int = 64, min_size: int = 8) -> CropWindow:
    """Square window around the mask's bbox, grown by ``margin``.

    The window is centered on the bbox, clamped inside the image, and never
    exceeds the image's short side.
    """
    mask = np.asarray(mask)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValidationError("mask is empty; nothing to crop")
    h, w = mask.shape
    top_b, bot_b = int(ys.min()), int(ys.max())
    left_b, right_b = int(xs.min()), int(xs.max())
    extent = max(bot_b - top_b + 1, right_b - left_b + 1)
    side = max(int(math.ceil(extent * margin)), min_size)
    side = min(side, min(h, w))
    cy = (top_b + bot_b) / 2.0
    cx = (left_b + right_b) / 2.0
    top = int(round(cy - side / 2.0))
    left = int(round(cx - side / 2.0))
    top = min(max(top, 0), h - side)
    left = min(max(left, 0), w - side)
    return CropWindow(left, top, side, out_size)


def crop_resize(image: torch.Tensor, window: CropWindow) -> torch.Tensor:
    """Differentiable crop + bilinear resize to the provider resolution.

    Accepts (H,W,3) or (H,W); returns the same rank at out_size.
    """
    squeeze = image.ndim == 2
    img = image.unsqueeze(-1) if squeeze else image
    patch = img[window.top:window.top + window.size,
                window.left:window.left + window.size]
    chw = patch.permute(2, 0, 1).unsqueeze(0)
    out = F.interpolate(chw, size=(window.out_size, window.out_size),
                        mode="bilinear", align_corners=False)
    out = out.squeeze(0).permute(1, 2, 0)
    return out.squeeze(-1) if squeeze else out


def paste_gradient(grad_crop: torch.Tensor, window: CropWindow,
                   height: int, width: int) -> torch.Tensor:
    """Upsample a crop-space gradient to the window and scatter into place."""
    chw = grad_crop.permute(2, 0, 1).unsqueeze(0)
    up = F.interpolate(chw, size=(window.size, window.size),
                       mode="bilinear", align_corners=False)
    full = torch.zeros(height, width, 3, dtype=grad_crop.dtype)
    full[window.top:window.top + window.size,
         window.left:window.left + window.size] = up.squeeze(0).permute(1, 2, 0)
    return full


# ---------------------------------------------------------------------------
# Requests and the distillation step
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GuidanceRequest:
    """Everything a provider needs to predict the noise on one crop."""

    noisy: np.ndarray          # (s,s,3) float32, x_t of the crop
    masked_scene: np.ndarray   # (s,s,3) float32, context with box zeroed
    mask: np.ndarray           # (s,s) float32 in [0,1], 1 = generate here
    prompt: str
    timestep: int
    seed: int                  # seed that generated eps for this step
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        s = self.noisy.shape[0]
        if self.noisy.shape != (s, s, 3):
            raise ValidationError("noisy crop must be square (s,s,3)")
        if self.masked_scene.shape != self.noisy.shape:
            raise ValidationError("masked_scene shape mismatch")
        if self.mask.shape != (s, s):
            raise ValidationError("mask shape mismatch")

    @property
    def crop_size(self) -> int:
        return self.noisy.shape[0]


@dataclass
class SdsGradient:
    """Result of one distillation step."""

    surrogate_loss: torch.Tensor   # scalar; d(loss)/d(image) == grad
    grad: torch.Tensor             # (H,W,3) detached image-space gradient
    timestep: int
    weight: float
    window: CropWindow
    eps_seed: int


def sds_step(image: torch.Tensor, scene_context: torch.Tensor,
             box_mask: np.ndarray, provider, schedule: NoiseSchedule,
             prompt: str, master_seed: int, step: int,
             margin: float = 1.25, provider_size: int = 64,
             metadata: dict | None = None) -> SdsGradient:
    """One score-distillation step on a rendered view.

    ``image`` is the differentiable composite; ``scene_context`` the cached
    scene color used for inpainting conditioning.  Deterministic given
    (master_seed, step): the timestep and noise derive from child seeds, and
    the noise seed travels inside the request so stateless providers can
    regenerate eps exactly.
    """
    h, w = image.shape[:2]
    window = compute_crop_window(box_mask, margin=margin, out_size=provider_size)

    crop = crop_resize(image, window)
    mask_t = torch.from_numpy(box_mask.astype(np.float32))
    mask_crop = crop_resize(mask_t, window).clamp(0.0, 1.0)
    context_crop = crop_resize(scene_context, window)
    masked_scene = context_crop * (1.0 - mask_crop.unsqueeze(-1))

    t = schedule.sample_timestep(rng(child_seed(master_seed, "sds.t", step)))
    eps_seed = child_seed(master_seed, "sds.eps", step)
    eps = standard_normal(eps_seed, (provider_size, provider_size, 3))

    a_bar = schedule.alpha_bar(t)
    crop_np = crop.detach().numpy().astype(np.float32)
    noisy = (math.sqrt(a_bar) * crop_np
             + math.sqrt(1.0 - a_bar) * eps).astype(np.float32)

    request = GuidanceRequest(
        noisy=noisy,
        masked_scene=masked_scene.detach().numpy().astype(np.float32),
        mask=mask_crop.detach().numpy().astype(np.float32),
        prompt=prompt,
        timestep=t,
        seed=eps_seed,
        metadata=dict(metadata or {}, window=window.to_dict()),
    )
    eps_hat = provider(request)
    eps_hat = np.asarray(eps_hat)
    if eps_hat.shape != noisy.shape:
        raise ProviderError(
            f"provider returned shape {eps_hat.shape}, expected {noisy.shape}")
    if not np.all(np.isfinite(eps_hat)):
        raise ProviderError("provider returned non-finite values")

    weight = schedule.weight(t)
    grad_crop = torch.from_numpy(
        (weight * (eps_hat.astype(np.float32) - eps)).astype(np.float32))
    grad = paste_gradient(grad_crop, window, h, w)
    surrogate = (grad.detach() * image).sum()
    return SdsGradient(surrogate, grad.detach(), t, weight, window, eps_seed)


# ---------------------------------------------------------------------------
# Providers
# ---------------------------------------------------------------------------

class TargetOracleProvider:
    """Deterministic denoiser whose fixed point is a known target image.

    Regenerates eps from the request seed, reconstructs the clean crop, and
    nudges the prediction toward the target inside the mask:

        eps_hat = eps + gain * sqrt(a_bar) * (clean - target) * mask

    so the distillation direction is (clean - target) on the mask and
    exactly zero off it.  ``targets`` may be a single image, a callable
    request -> image, or a dict keyed by background mode or by
    (view_id, background_mode).
    """

    def __init__(self, targets, schedule: NoiseSchedule, gain: float = 1.0):
        self.targets = targets
        self.schedule = schedule
        self.gain = gain
        self.calls = 0

    def _lookup(self, request: GuidanceRequest) -> np.ndarray:
        t = self.targets
        if callable(t):
            return np.asarray(t(request), dtype=np.float32)
        if isinstance(t, dict):
            meta = request.metadata
            key_full = (meta.get("view_id"), meta.get("background_mode"))
            if key_full in t:
                t = t[key_full]
            elif meta.get("background_mode") in t:
                t = t[meta.get("background_mode")]
            else:
                raise ProviderError(f"no oracle target for {key_full}")
        return np.asarray(t, dtype=np.float32)

    def __call__(self, request: GuidanceRequest) -> np.ndarray:
        self.calls += 1
        target = self._lookup(request)
        if target.shape != request.noisy.shape:
            raise ProviderError(
                f"oracle target shape {target.shape} does not match crop "
                f"{request.noisy.shape}")
        eps = standard_normal(request.seed, request.noisy.shape)
        a_bar = self.schedule.alpha_bar(request.timestep)
        clean = (request.noisy - math.sqrt(1.0 - a_bar) * eps) \
            / math.sqrt(a_bar)
        push = self.gain * math.sqrt(a_bar) * (clean - target) \
            * request.mask[..., None]
        return (eps + push).astype(np.float32)


# ---------------------------------------------------------------------------
# Wire format
# ---------------------------------------------------------------------------

def encode_image16(arr: np.ndarray, lo: float, hi: float) -> bytes:
    """Lossy-but-tight 16-bit PNG encoding of a float image in [lo, hi].

    Multi-channel images are unrolled channel-major along the width, since
    PNG I;16 is single channel: (H, W, C) becomes (H, C*W).
    """
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3:
        arr = np.concatenate([arr[..., c] for c in range(arr.shape[2])],
                             axis=1)
    q = np.clip(np.rint((arr - lo) / (hi - lo) * 65535.0), 0,
                65535).astype(np.uint16)
    buf = io.BytesIO()
    Image.fromarray(q).save(buf, format="PNG")
    return buf.getvalue()


def decode_image16(data: bytes, lo: float, hi: float,
                   channels: int = 1) -> np.ndarray:
    img = Image.open(io.BytesIO(data))
    q = np.asarray(img, dtype=np.float64)
    if channels > 1:
        if q.shape[1] % channels:
            raise ProviderError("encoded width is not divisible by channels")
        w = q.shape[1] // channels
        q = np.stack([q[:, c * w:(c + 1) * w] for c in range(channels)],
                     axis=-1)
    return (lo + q / 65535.0 * (hi - lo)).astype(np.float32)


def encode_response(eps_hat: np.ndarray) -> bytes:
    return np.ascontiguousarray(eps_hat, dtype="<f4").tobytes()


def decode_response(data: bytes, size: int) -> np.ndarray:
    arr = np.frombuffer(data, dtype="<f4")
    if arr.size != size * size * 3:
        raise ProviderError(
            f"provider response has {arr.size} floats, expected "
            f"{size * size * 3}")
    return arr.reshape(size, size, 3).copy()


class HttpProvider:
    """Client side of the multipart guidance contract."""

    def __init__(self, url: str, timeout: float = 60.0, retries: int = 2):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.retries = retries

    def __call__(self, request: GuidanceRequest) -> np.ndarray:
        import requests as rq

        meta = {
            "prompt": request.prompt,
            "timestep": request.timestep,
            "seed": str(request.seed),   # string: 63-bit ints break JSON readers
            "crop_size": request.crop_size,
            "metadata": request.metadata,
        }
        files = {
            "noisy": ("noisy.png",
                      encode_image16(request.noisy, *NOISY_RANGE),
                      "image/png"),
            "masked_scene": ("masked_scene.png",
                             encode_image16(request.masked_scene, *UNIT_RANGE),
                             "image/png"),
            "mask": ("mask.png", encode_image16(request.mask, *UNIT_RANGE),
                     "image/png"),
        }
        last = None
        for attempt in range(self.retries + 1):
            try:
                resp = rq.post(f"{self.url}/guidance", files=files,
                               data={"meta": json.dumps(meta)},
                               timeout=self.timeout)
            except rq.RequestException as exc:
                last = ProviderError(f"provider unreachable: {exc}",
                                     retriable=True)
                continue
            if resp.status_code >= 500:
                last = ProviderError(
                    f"provider error {resp.status_code}", retriable=True)
                continue
            if resp.status_code != 200:
                raise ProviderError(
                    f"provider rejected request ({resp.status_code}): "
                    f"{resp.text[:200]}")
            return decode_response(resp.content, request.crop_size)
        raise last


def create_provider_app(provider, schedule: NoiseSchedule | None = None):
    """FastAPI app exposing ``provider`` under the guidance wire contract."""
    from fastapi import FastAPI, Form, UploadFile
    from fastapi.responses import Response

    app = FastAPI(title="guidance provider")
    app.state.provider = provider
    app.state.schedule = schedule or NoiseSchedule()

    @app.post("/guidance")
    async def guidance(noisy: UploadFile, masked_scene: UploadFile,
                       mask: UploadFile, meta: str = Form(...)):
        info = json.loads(meta)
        size = int(info["crop_size"])
        request = GuidanceRequest(
            noisy=decode_image16(await noisy.read(), *NOISY_RANGE, channels=3),
            masked_scene=decode_image16(await masked_scene.read(),
                                        *UNIT_RANGE, channels=3),
            mask=decode_image16(await mask.read(), *UNIT_RANGE),
            prompt=info.get("prompt", ""),
            timestep=int(info["timestep"]),
            seed=int(info["seed"]),
            metadata=info.get("metadata", {}),
        )
        eps_hat = app.state.provider(request)
        return Response(content=encode_response(eps_hat),
                        media_type="application/octet-stream")

    return app
