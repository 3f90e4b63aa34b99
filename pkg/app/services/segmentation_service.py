"""
Segmentation Service - SLIC superpixels on single-channel spectrograms
"""
import logging
import math
from typing import List

import numpy as np
from scipy import ndimage

from app.core.exceptions import SegmentationError
from app.models.segmentation import SegmentMap

logger = logging.getLogger(__name__)

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


class SLIC:
    """
    Simple Linear Iterative Clustering over (intensity, row, col)

    Distance: D = sqrt(d_intensity^2 + (compactness * d_spatial / S)^2), with
    S = sqrt(F*T/k) and a 2S x 2S search window per center. Intensities are
    min-max normalized to [0, 1] first so compactness is scale-free.
    """

    def __init__(self, image: np.ndarray, k: int, compactness: float = 10.0, iters: int = 10):
        self.image = np.asarray(image, dtype=np.float64)
        if self.image.ndim != 2:
            raise SegmentationError(f"SLIC expects a 2-D image, got shape {self.image.shape}")
        self.height, self.width = self.image.shape
        pixels = self.height * self.width
        if not 1 <= k <= pixels:
            raise SegmentationError(f"k={k} outside [1, {pixels}]")
        if compactness <= 0 or iters < 1:
            raise SegmentationError(f"compactness must be > 0 and iters >= 1 (got {compactness}, {iters})")

        self.k = k
        self.compactness = compactness
        self.iters = iters
        self.step = math.sqrt(pixels / k)

        low, high = float(self.image.min()), float(self.image.max())
        self.intensity = (self.image - low) / (high - low) if high > low else np.zeros_like(self.image)
        self.rows, self.cols = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        self.centers = self.initialize_centers()
        self.objective_history: List[float] = []

    def initialize_centers(self) -> np.ndarray:
        """Regular lattice: ceil(sqrt(k)) columns, ceil(k / columns) rows, cell centers"""
        grid_cols = min(self.width, math.ceil(math.sqrt(self.k)))
        grid_rows = min(self.height, math.ceil(self.k / grid_cols))
        centers = []
        for i in range(grid_rows):
            r = (i + 0.5) * self.height / grid_rows - 0.5
            for j in range(grid_cols):
                c = (j + 0.5) * self.width / grid_cols - 0.5
                centers.append([r, c, self.intensity[int(round(r)), int(round(c))]])
        return np.array(centers, dtype=np.float64)

    def distances(self) -> np.ndarray:
        """(K, F, T) SLIC distance; +inf outside each center's search window"""
        dr = self.rows[None] - self.centers[:, 0, None, None]
        dc = self.cols[None] - self.centers[:, 1, None, None]
        di = self.intensity[None] - self.centers[:, 2, None, None]
        spatial = (self.compactness / self.step) ** 2 * (dr ** 2 + dc ** 2)
        dist = np.sqrt(di ** 2 + spatial)
        outside = (np.abs(dr) > self.step) | (np.abs(dc) > self.step)
        windowed = np.where(outside, np.inf, dist)
        # pixels no window reaches fall back to the unrestricted distance
        orphaned = np.all(outside, axis=0)
        if np.any(orphaned):
            windowed[:, orphaned] = dist[:, orphaned]
        return windowed

    def assign(self) -> np.ndarray:
        """Nearest center per pixel; equal distances go to the lowest center index"""
        dist = self.distances()
        labels = np.argmin(dist, axis=0)
        chosen = np.take_along_axis(dist, labels[None], axis=0)[0]
        self.objective_history.append(float(np.sum(chosen ** 2)))
        return labels

    def update(self, labels: np.ndarray) -> None:
        """Move each non-empty center to the mean of its pixels"""
        flat = labels.reshape(-1)
        counts = np.bincount(flat, minlength=len(self.centers)).astype(np.float64)
        for axis, source in enumerate((self.rows, self.cols, self.intensity)):
            sums = np.bincount(flat, weights=source.reshape(-1), minlength=len(self.centers))
            occupied = counts > 0
            self.centers[occupied, axis] = sums[occupied] / counts[occupied]

    def iterate(self) -> np.ndarray:
        labels = self.assign()
        for _ in range(self.iters):
            self.update(labels)
            labels = self.assign()
        return labels


class SegmentationService:
    """SLIC superpixels for spectrograms"""

    @staticmethod
    def enforce_connectivity(labels: np.ndarray) -> np.ndarray:
        """
        Make every segment a single 4-connected region

        Each segment keeps its largest component (ties: lowest component id);
        every other component is merged, smallest first, into the largest
        adjacent region. Labels are then relabeled densely.
        """
        labels = np.asarray(labels, dtype=np.int64)
        regions = np.zeros_like(labels)
        next_id = 0
        owner = []  # original segment of each region
        for segment in np.unique(labels):
            components, n = ndimage.label(labels == segment, structure=FOUR_CONNECTED)
            mask = components > 0
            regions[mask] = components[mask] - 1 + next_id
            owner.extend([int(segment)] * n)
            next_id += n

        sizes = np.bincount(regions.reshape(-1), minlength=next_id)
        owner = np.array(owner)
        orphans = []
        for segment in np.unique(owner):
            members = np.flatnonzero(owner == segment)
            core = members[np.argmax(sizes[members])]
            orphans.extend(int(m) for m in members if m != core)

        for region in sorted(orphans, key=lambda r: (sizes[r], r)):
            mask = regions == region
            if not np.any(mask):
                continue
            border = ndimage.binary_dilation(mask, structure=FOUR_CONNECTED) & ~mask
            neighbors = np.unique(regions[border])
            if neighbors.size == 0:
                continue
            target = int(neighbors[np.argmax(sizes[neighbors])])
            regions[mask] = target
            sizes[target] += sizes[region]
            sizes[region] = 0

        _, dense = np.unique(regions, return_inverse=True)
        return dense.reshape(labels.shape)

    @staticmethod
    def slic(
        image: np.ndarray,
        k: int = 32,
        compactness: float = 10.0,
        iters: int = 10,
        seed: int = 0,
    ) -> SegmentMap:
        """
        SLIC superpixels with connectivity enforcement

        Args:
            image: F x T intensity matrix
            k: Requested segment count (the lattice may yield a few more; the
                final count is whatever survives connectivity enforcement)
            compactness: Spatial weight against intensity
            iters: Assignment/update rounds
            seed: Accepted for interface symmetry; lattice initialization is
                deterministic and draws no random numbers

        Returns:
            SegmentMap with dense labels and the per-round objective history

        Raises:
            SegmentationError: k outside [1, F*T]
        """
        clustering = SLIC(image, k, compactness=compactness, iters=iters)
        raw = clustering.iterate()
        labels = SegmentationService.enforce_connectivity(raw)
        n_segments = int(labels.max()) + 1
        logger.debug(
            f"SLIC {clustering.height}x{clustering.width}, k={k}: {len(clustering.centers)} centers "
            f"-> {n_segments} segments"
        )
        return SegmentMap(labels=labels, n_segments=n_segments, objective_history=clustering.objective_history)

    @staticmethod
    def segment_pixel_counts(segment_map: SegmentMap) -> np.ndarray:
        """Pixel count per segment label"""
        return np.bincount(segment_map.labels.reshape(-1), minlength=segment_map.n_segments)
