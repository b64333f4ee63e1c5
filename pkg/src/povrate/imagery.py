"""Cluster imagery acquisition: catalog search, scene selection, crops, raster I/O.

Rasters use a deliberately plain on-disk format: a raw little-endian float32
payload (row-major, height x width x channels) next to a JSON sidecar at
``<path>.json``. Scene files use the same payload convention with extra
geolocation keys in the sidecar. Longitude/latitude map to pixels through a
constant-scale equirectangular approximation; this is not a reprojection.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from datetime import datetime

import numpy as np
import requests

from .errors import (
    AssetFetchError,
    CatalogParseError,
    CatalogUnavailable,
    NoScenesFound,
    RasterFormatError,
)
from .survey import round_half_up

METERS_PER_DEG_LAT = 111320.0
TILE_SIDECAR_KEYS = ("cluster_id", "width", "height", "channels", "gsd")


def meters_per_deg_lon(lat: float) -> float:
    return METERS_PER_DEG_LAT * math.cos(math.radians(lat))


@dataclass
class RasterTile:
    """RGB crop centered on a survey cluster, pixel values scaled to [0, 1]."""

    cluster_id: str
    gsd: float
    pixels: np.ndarray  # (height, width, 3) float32

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise RasterFormatError(f"tile must be HxWx3, got shape {self.pixels.shape}")
        if self.height < 3 or self.width < 3:
            raise RasterFormatError(f"tile must be at least 3x3, got {self.height}x{self.width}")
        if float(self.pixels.min(initial=0.0)) < 0.0 or float(self.pixels.max(initial=0.0)) > 1.0:
            raise RasterFormatError("tile pixel values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class CatalogItem:
    """One catalog search result."""

    item_id: str
    cloud_cover: float
    acquired: str
    asset_ref: str

    def __post_init__(self):
        if not 0.0 <= self.cloud_cover <= 100.0:
            raise CatalogParseError(f"cloud_cover {self.cloud_cover} outside [0, 100]")

    @property
    def acquired_at(self) -> datetime:
        return parse_datetime(self.acquired)


def parse_datetime(text: str) -> datetime:
    try:
        return datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as err:
        raise CatalogParseError(f"bad datetime {text!r}: {err}") from None


def query_catalog(endpoint: str, bbox, date_range, collection: str, timeout: float = 30.0) -> list[CatalogItem]:
    """POST a search to the catalog and return the items in server order."""
    start, end = date_range
    payload = {
        "bbox": [float(v) for v in bbox],
        "datetime": f"{start}/{end}",
        "collections": [collection],
    }
    url = endpoint.rstrip("/") + "/search"
    try:
        resp = requests.post(url, json=payload, timeout=timeout)
    except requests.RequestException as err:
        raise CatalogUnavailable(0, f"catalog unreachable: {err}") from err
    if resp.status_code != 200:
        raise CatalogUnavailable(resp.status_code)
    try:
        body = resp.json()
        items = [
            CatalogItem(
                item_id=str(entry["id"]),
                cloud_cover=float(entry["cloud_cover"]),
                acquired=str(entry["acquired"]),
                asset_ref=str(entry["asset_ref"]),
            )
            for entry in body
        ]
    except (ValueError, KeyError, TypeError) as err:
        raise CatalogParseError(f"malformed catalog response: {err}") from err
    return items


def select_least_cloudy(items: list[CatalogItem]) -> CatalogItem:
    """Pick the scene with minimal cloud cover; ties go to the earliest
    acquisition, then the lexicographically smallest item id."""
    if not items:
        raise NoScenesFound("catalog returned no scenes")
    return min(items, key=lambda it: (it.cloud_cover, it.acquired_at, it.item_id))


# --- raster tile I/O ---

def save_raster(tile: RasterTile, path) -> None:
    arr = np.ascontiguousarray(tile.pixels, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(arr.tobytes())
    sidecar = {
        "cluster_id": tile.cluster_id,
        "width": tile.width,
        "height": tile.height,
        "channels": 3,
        "gsd": tile.gsd,
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True)
        fh.write("\n")


def load_raster(path) -> RasterTile:
    try:
        with open(str(path) + ".json", "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
        width = int(sidecar["width"])
        height = int(sidecar["height"])
        channels = int(sidecar["channels"])
        cluster_id = str(sidecar["cluster_id"])
        gsd = float(sidecar["gsd"])
    except (OSError, ValueError, KeyError) as err:
        raise RasterFormatError(f"corrupt raster sidecar for {path}: {err}") from err
    if channels != 3:
        raise RasterFormatError(f"expected 3 channels (RGB), sidecar says {channels}")
    data = np.fromfile(path, dtype="<f4")
    expected = width * height * channels
    if data.size != expected:
        raise RasterFormatError(
            f"payload holds {data.size} values but sidecar implies {expected}"
        )
    return RasterTile(cluster_id=cluster_id, gsd=gsd, pixels=data.reshape(height, width, channels))


# --- scenes (catalog assets) ---

@dataclass
class Scene:
    """Source scene a crop is cut from; raw reflectance values, geolocated."""

    gsd: float
    origin_lon: float  # geolocation of the center of pixel (0, 0)
    origin_lat: float
    pixels: np.ndarray  # (height, width, 3) float32, raw reflectance scale


def save_scene(scene: Scene, path) -> None:
    arr = np.ascontiguousarray(scene.pixels, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(arr.tobytes())
    sidecar = {
        "width": int(scene.pixels.shape[1]),
        "height": int(scene.pixels.shape[0]),
        "channels": 3,
        "gsd": scene.gsd,
        "origin_lon": scene.origin_lon,
        "origin_lat": scene.origin_lat,
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True)
        fh.write("\n")


def _read_asset(asset_ref: str) -> tuple[bytes, dict]:
    if asset_ref.startswith(("http://", "https://")):
        try:
            payload = requests.get(asset_ref, timeout=60)
            sidecar = requests.get(asset_ref + ".json", timeout=60)
        except requests.RequestException as err:
            raise AssetFetchError(f"cannot fetch asset {asset_ref}: {err}") from err
        if payload.status_code != 200 or sidecar.status_code != 200:
            raise AssetFetchError(
                f"asset fetch failed: {asset_ref} -> {payload.status_code}/{sidecar.status_code}"
            )
        return payload.content, sidecar.json()
    path = asset_ref[len("file://"):] if asset_ref.startswith("file://") else asset_ref
    try:
        with open(path, "rb") as fh:
            payload = fh.read()
        with open(path + ".json", "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
    except OSError as err:
        raise AssetFetchError(f"cannot read asset {asset_ref}: {err}") from err
    return payload, sidecar


def load_scene(asset_ref: str) -> Scene:
    payload, sidecar = _read_asset(asset_ref)
    try:
        width = int(sidecar["width"])
        height = int(sidecar["height"])
        channels = int(sidecar["channels"])
        gsd = float(sidecar["gsd"])
        origin_lon = float(sidecar["origin_lon"])
        origin_lat = float(sidecar["origin_lat"])
    except (KeyError, ValueError) as err:
        raise AssetFetchError(f"scene sidecar missing fields: {err}") from err
    data = np.frombuffer(payload, dtype="<f4")
    if data.size != width * height * channels or channels != 3:
        raise AssetFetchError(
            f"scene payload/sidecar mismatch: {data.size} values for {height}x{width}x{channels}"
        )
    return Scene(
        gsd=gsd,
        origin_lon=origin_lon,
        origin_lat=origin_lat,
        pixels=data.reshape(height, width, channels).copy(),
    )


def fetch_crop(
    item: CatalogItem,
    center,
    size_km: float = 10.0,
    gsd: float = 10.0,
    cluster_id: str = "",
    full_scale: float = 10000.0,
) -> tuple[RasterTile, float]:
    """Cut a fixed-size crop centered on (lon, lat) out of the item's asset.

    Returns the tile plus the fraction of pixels that fell outside the scene
    and were zero-padded. Pixel values are divided by ``full_scale`` and
    clamped to [0, 1].
    """
    scene = load_scene(item.asset_ref)
    if abs(scene.gsd - gsd) > 1e-9:
        raise AssetFetchError(
            f"scene gsd {scene.gsd} differs from requested {gsd}; resampling is unsupported"
        )
    lon, lat = float(center[0]), float(center[1])
    n = round_half_up(size_km * 1000.0 / gsd)
    if n < 3:
        n = 3
    row_c = round_half_up((scene.origin_lat - lat) * METERS_PER_DEG_LAT / gsd)
    col_c = round_half_up((lon - scene.origin_lon) * meters_per_deg_lon(lat) / gsd)
    top = row_c - n // 2
    left = col_c - n // 2

    out = np.zeros((n, n, 3), dtype=np.float32)
    src_h, src_w = scene.pixels.shape[:2]
    r0, r1 = max(top, 0), min(top + n, src_h)
    c0, c1 = max(left, 0), min(left + n, src_w)
    copied = 0
    if r0 < r1 and c0 < c1:
        window = scene.pixels[r0:r1, c0:c1] / np.float32(full_scale)
        out[r0 - top : r1 - top, c0 - left : c1 - left] = np.clip(window, 0.0, 1.0)
        copied = (r1 - r0) * (c1 - c0)
    pad_fraction = 1.0 - copied / float(n * n)
    tile = RasterTile(cluster_id=cluster_id or item.item_id, gsd=gsd, pixels=out)
    return tile, pad_fraction
