"""Analytic multi-ellipsoid phantoms and random ground-truth transforms.

A phantom is a parametric description rendered on demand, so a moving image
can be produced by evaluating the same description at transformed
coordinates instead of resampling a rendered volume.
"""
from dataclasses import dataclass, field

import numpy as np

from .affine import GeometricParams, ROTATION_BOUND, SHEAR_BOUND, TRANSLATION_BOUND
from .volume import LabelVolume, Volume3D, homogeneous_grid

MIN_DIMS = 16
EDGE = 0.3  # width of the smooth boundary band centred on each surface, in radius units


@dataclass
class Ellipsoid:
    center: np.ndarray
    radii: np.ndarray
    rotation: np.ndarray
    intensity: float
    label: int = 0

    def rho(self, pts):
        local = (pts - self.center) @ self.rotation
        return np.sqrt(((local / self.radii) ** 2).sum(axis=1))


@dataclass
class PhantomSpec:
    head: Ellipsoid
    structures: list = field(default_factory=list)
    gradient: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # smooth texture: sum of plane waves amplitude * cos(wave @ x + phase)
    waves: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    phases: np.ndarray = field(default_factory=lambda: np.zeros(0))
    amplitude: float = 0.0

    def texture(self, pts):
        if not len(self.waves):
            return np.zeros(len(pts))
        scale = self.amplitude * np.sqrt(2.0 / len(self.waves))
        return scale * np.cos(pts @ self.waves.T + self.phases).sum(axis=1)

    @property
    def num_labels(self):
        return len(self.structures)


def _profile(rho):
    """1 inside, 0 outside, smoothstep across [1 - EDGE/2, 1 + EDGE/2]."""
    u = np.clip((1.0 + EDGE / 2 - rho) / EDGE, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _random_rotation(rng, max_angle):
    from .affine import elementary_matrix

    a = rng.uniform(-max_angle, max_angle, 3)
    R = elementary_matrix("Rx", a[0]) @ elementary_matrix("Ry", a[1]) @ elementary_matrix("Rz", a[2])
    return R[:3, :3]


HEAD_RADII = (0.7, 0.8)
STRUCTURE_RADII = (0.45, 0.56)
TEXTURE_WAVES = 24
TEXTURE_WAVELENGTH = (0.15, 0.3)  # normalized units
TEXTURE_AMPLITUDE = 0.1  # relative intensity modulation (standard deviation)
MIN_SEPARATION = 0.45  # fraction of the summed radii; structures may overlap, later ones win


def make_phantom_spec(seed, n_structures=None):
    rng = np.random.default_rng(seed)
    head = Ellipsoid(
        center=rng.uniform(-0.05, 0.05, 3),
        radii=rng.uniform(*HEAD_RADII, 3),
        rotation=_random_rotation(rng, 0.3),
        intensity=float(rng.uniform(0.3, 0.4)),
    )
    k = int(rng.integers(3, 6)) if n_structures is None else int(n_structures)
    intensities = rng.permutation(np.linspace(0.55, 1.0, k))
    structures = []
    attempts = 0
    while len(structures) < k:
        attempts += 1
        shrink = 0.97 ** (attempts // 50)
        radii = rng.uniform(*STRUCTURE_RADII, 3) * shrink
        # keep the structure well inside the head in its own frame
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        room = 1.0 - radii.max() / head.radii.min() - EDGE / 2
        if room <= 0:
            continue
        depth = rng.uniform(0.0, room)
        center = head.center + head.rotation @ (direction * head.radii * depth)
        if any(np.linalg.norm(center - s.center) < MIN_SEPARATION * (radii.max() + s.radii.max()) for s in structures):
            continue
        structures.append(
            Ellipsoid(center, radii, _random_rotation(rng, np.pi), float(intensities[len(structures)]), len(structures) + 1)
        )
    gradient = rng.uniform(-0.15, 0.15, 3)
    n_waves = TEXTURE_WAVES
    directions = rng.normal(size=(n_waves, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    waves = directions * (2 * np.pi / rng.uniform(*TEXTURE_WAVELENGTH, (n_waves, 1)))
    phases = rng.uniform(0, 2 * np.pi, n_waves)
    return PhantomSpec(head, structures, gradient, waves, phases, TEXTURE_AMPLITUDE)


def render(spec, dims, A=None):
    """Evaluate the phantom at ``A x`` for every voxel ``x`` of ``dims``.

    Returns ``(Volume3D, LabelVolume)``; the background is exactly zero.
    """
    dims = tuple(int(n) for n in dims)
    grid = homogeneous_grid(dims)
    pts = grid @ (np.eye(4) if A is None else np.asarray(A, dtype=np.float64))[:3].T
    head = _profile(spec.head.rho(pts))
    value = spec.head.intensity * (1.0 + pts @ spec.gradient)
    labels = np.zeros(len(pts), dtype=np.int64)
    for s in spec.structures:
        rho = s.rho(pts)
        p = _profile(rho)
        value = value + (s.intensity - value) * p
        labels[rho < 1.0] = s.label
    labels[spec.head.rho(pts) >= 1.0] = 0
    value = value * (1.0 + spec.texture(pts))
    img = np.where(head > 0, head * value, 0.0).reshape(dims)
    return Volume3D(img), LabelVolume(labels.reshape(dims), spec.num_labels)


def make_phantom(dims, seed, n_structures=None):
    """Deterministic phantom volume and labels of size ``dims`` (int or triple)."""
    if np.isscalar(dims):
        dims = (int(dims),) * 3
    if min(dims) < MIN_DIMS:
        raise ValueError(f"phantom dims must be at least {MIN_DIMS} per axis, got {dims}")
    return render(make_phantom_spec(seed, n_structures), dims)


def sample_random_affine(seed, magnitude):
    """Uniform draw from the constraint box shrunk by ``magnitude`` in (0, 1]."""
    if not 0.0 <= magnitude <= 1.0:
        raise ValueError(f"magnitude must lie in (0, 1], got {magnitude}")
    rng = np.random.default_rng(seed)
    m = magnitude
    return GeometricParams(
        t=rng.uniform(-m, m, 3) * TRANSLATION_BOUND,
        r=rng.uniform(-m, m, 3) * ROTATION_BOUND,
        s=1.0 + rng.uniform(-m, m, 3) * 0.5,
        h=rng.uniform(-m, m, 3) * SHEAR_BOUND,
    )


@dataclass
class SyntheticPair:
    """A fixed phantom, its analytically re-rendered moving copy and the truth.

    ``matrix`` is the transform that registers the moving image onto the
    fixed one (``M(matrix @ x) == F(x)`` up to field-of-view loss), and
    ``params`` its decoupled parameters about the fixed image's centre of mass.
    """

    fixed: Volume3D
    moving: Volume3D
    fixed_labels: LabelVolume
    moving_labels: LabelVolume
    params: GeometricParams
    matrix: np.ndarray


def make_pair(dims, seed, magnitude=None, params=None):
    """Phantom pair warped by ``params`` or by a random draw of ``magnitude``."""
    from .affine import compose, recenter
    from .volume import center_of_mass

    if np.isscalar(dims):
        dims = (int(dims),) * 3
    if min(dims) < MIN_DIMS:
        raise ValueError(f"phantom dims must be at least {MIN_DIMS} per axis, got {dims}")
    phantom_seed, affine_seed = np.random.SeedSequence(seed).generate_state(2)
    spec = make_phantom_spec(int(phantom_seed))
    F, S_F = render(spec, dims)
    if params is None:
        params = sample_random_affine(int(affine_seed), 0.0 if magnitude is None else magnitude)
    A = recenter(compose(params), center_of_mass(F))
    M, S_M = render(spec, dims, np.linalg.inv(A))
    return SyntheticPair(F, M, S_F, S_M, params, A)
