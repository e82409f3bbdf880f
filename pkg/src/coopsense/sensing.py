"""Per-BS OFDM monostatic sensing chain.

Transmit grid -> multi-beam precoding -> backscatter channel -> combining ->
reciprocal filtering -> double periodogram -> range-angle map.

The periodogram transform is normalized by 1/(K*Ms) so a unit-amplitude
complex tone maps to a peak value of 1; absolute detection thresholds are
therefore tied to this normalization and calibrated against the noise floor
(see :func:`excision_threshold`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import STREAM_FAST_NOISE, STREAM_NOISE, STREAM_TX, substream
from .scenario import SPEED_OF_LIGHT

QPSK_ALPHABET = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)


@dataclass
class SymbolGrid:
    """K x Ms grid of complex OFDM symbols."""

    entries: np.ndarray
    role: str  # "tx" | "rx" | "quotient"

    @property
    def shape(self):
        return self.entries.shape


@dataclass
class BeamWeights:
    """Transmit (multi-beam) and receive (sensing) beamformers."""

    tx_weights: np.ndarray
    rx_weights: np.ndarray
    sense_dir_rad: float
    comm_dir_rad: float


@dataclass
class RangeAngleMap:
    """Polar power map: rows = range bins, columns = scan directions."""

    values: np.ndarray
    range_bin_m: float
    scan_dirs_rad: np.ndarray  # relative to the BS boresight
    bs_id: int
    scan_index: int
    synthesis: str = "signal"  # "signal" (full chain) | "fast" (power-level)

    @property
    def ranges_m(self):
        return np.arange(self.values.shape[0]) * self.range_bin_m


def make_tx_grid(num_subcarriers, num_symbols, rng):
    """I.i.d. uniform QPSK grid, unit modulus."""
    if num_subcarriers < 1 or num_symbols < 1:
        raise ValueError("grid dimensions must be >= 1")
    idx = rng.integers(0, 4, size=(num_subcarriers, num_symbols))
    return SymbolGrid(QPSK_ALPHABET[idx], role="tx")


def steering_vector(num_elements, angle_rad):
    """Half-wavelength ULA response a(theta)_n = exp(j pi n sin theta)."""
    n = np.arange(num_elements)
    return np.exp(1j * math.pi * n * math.sin(angle_rad))


def array_gain_factor(num_elements, sense_dir_rad, target_dir_rad):
    """Normalized one-way array power gain toward an off-beam direction.

    Equals |a(theta_t)^T a*(theta_s)|^2 / N^2, i.e. 1 at perfect alignment.
    """
    u = math.sin(target_dir_rad) - math.sin(sense_dir_rad)
    af = np.sum(np.exp(1j * math.pi * np.arange(num_elements) * u)) / num_elements
    return float(np.abs(af) ** 2)


def tx_beamformer(params, sense_dir_rad, comm_dir_rad):
    """Multi-beam transmit precoder splitting power between sensing and comm.

    w_T = sqrt(P_T G_T^a)/N_T (sqrt(rho) a*(theta_s) + sqrt(1-rho) a*(theta_c)),
    w_R = a*(theta_s).
    """
    for d in (sense_dir_rad, comm_dir_rad):
        if not -math.pi / 2 <= d <= math.pi / 2:
            raise ValueError("beam directions must lie in [-pi/2, pi/2]")
    rho = params.sensing_power_fraction
    amp = math.sqrt(params.eirp_watts) / params.num_tx_antennas
    w_t = amp * (math.sqrt(rho) * np.conj(steering_vector(params.num_tx_antennas, sense_dir_rad))
                 + math.sqrt(1.0 - rho) * np.conj(steering_vector(params.num_tx_antennas,
                                                                  comm_dir_rad)))
    w_r = np.conj(steering_vector(params.num_rx_antennas, sense_dir_rad))
    return BeamWeights(tx_weights=w_t, rx_weights=w_r,
                       sense_dir_rad=sense_dir_rad, comm_dir_rad=comm_dir_rad)


def simulate_rx_grid(tx, weights, reflections, params, rng, include_noise=True):
    """Received symbol grid after the backscatter channel and rx combining.

    The channel of each reflection contributes a Doppler phase ramp across
    symbols, a delay phase ramp across subcarriers, and a complex gain
    collapsing the array response outer product onto the beamformers. Noise is
    drawn at the combined level with variance sigma_N^2 * ||w_R||^2, which is
    distributed identically to w_R^T n with per-antenna noise n.
    """
    k, ms = tx.entries.shape
    df = params.subcarrier_spacing_hz
    ts = params.total_symbol_duration_s
    y = np.zeros((k, ms), dtype=complex)
    k_idx = np.arange(k)
    m_idx = np.arange(ms)
    sqrt_gr = math.sqrt(params.rx_element_gain)
    for refl in reflections:
        if refl.path_gain == 0:
            continue
        a_t = steering_vector(params.num_tx_antennas, refl.doa_rad)
        a_r = steering_vector(params.num_rx_antennas, refl.doa_rad)
        scal = refl.path_gain * sqrt_gr * (a_t @ weights.tx_weights) * (weights.rx_weights @ a_r)
        range_phase = np.exp(-2j * math.pi * k_idx * df * refl.delay_s)
        doppler_phase = np.exp(2j * math.pi * m_idx * ts * refl.doppler_hz)
        y += scal * np.outer(range_phase, doppler_phase)
    y *= tx.entries
    if include_noise:
        var = params.noise_variance_w * float(np.sum(np.abs(weights.rx_weights) ** 2))
        y += math.sqrt(var / 2.0) * (rng.standard_normal((k, ms))
                                     + 1j * rng.standard_normal((k, ms)))
    return SymbolGrid(y, role="rx")


def sensing_snr(reflection, params, array_gain):
    """Per-rx-antenna SNR of one reflection for a given tx array gain factor."""
    if not 0.0 <= array_gain <= 1.0:
        raise ValueError("array gain factor must lie in [0, 1]")
    if reflection.distance_m <= 0:
        raise ValueError("reflection distance must be > 0")
    pl = (SPEED_OF_LIGHT ** 2 * reflection.drawn_rcs_m2
          / ((4.0 * math.pi) ** 3 * params.carrier_freq_hz ** 2 * reflection.distance_m ** 4))
    return (params.sensing_power_fraction * array_gain
            * params.eirp_watts * params.rx_element_gain / params.noise_variance_w * pl)


def _window(kind, n):
    if kind == "rect":
        return np.ones(n)
    if kind == "hann":
        return np.hanning(n)
    raise ValueError(f"unknown window {kind!r}")


def window_noise_factor(kind, n):
    """Noise-floor inflation of one windowed axis relative to rectangular."""
    w = _window(kind, n)
    return float(n * np.sum(w ** 2) / np.sum(w) ** 2)


def range_doppler_map(rx, tx, zero_pad_range=1, zero_pad_doppler=1, window="rect"):
    """Squared-magnitude double periodogram of the reciprocal-filtered grid.

    Subcarriers are analyzed in the conjugate direction (delay appears at
    positive range bins n ~ tau * Nr * df) and symbols in the forward
    direction (Doppler at bins nu ~ f_D * Nd * Ts). The transform is scaled
    by the window mass (plain K*Ms for the rectangular window) so a
    unit-amplitude tone always maps to a peak value of 1; the Hann window
    trades 1.76 dB of processing gain per axis for -31 dB range sidelobes,
    which keeps strong Swerling draws from ghosting across range bins.
    """
    if rx.entries.shape != tx.entries.shape:
        raise ValueError("rx and tx grids must share dimensions")
    if np.any(tx.entries == 0):
        raise ValueError("tx grid contains zero symbols; reciprocal filter undefined")
    k, ms = tx.entries.shape
    nr, nd = k * zero_pad_range, ms * zero_pad_doppler
    w_r = _window(window, k)
    w_d = _window(window, ms)
    g = (rx.entries / tx.entries) * np.outer(w_r, w_d)
    spec = np.fft.ifft(g, n=nr, axis=0) * nr     # sum_k g e^{+j 2 pi k n / Nr}
    spec = np.fft.fft(spec, n=nd, axis=1)        # sum_m  . e^{-j 2 pi m nu / Nd}
    return np.abs(spec / (np.sum(w_r) * np.sum(w_d))) ** 2


def range_angle_map(per_direction_maps, scan_dirs_rad, range_bin_m, bs_id=0,
                    scan_index=0, synthesis="signal"):
    """Collapse per-direction range-Doppler maps into one range-angle map.

    For each scan direction, the retained column is the Doppler column that
    contains the global maximum of that direction's map.
    """
    if len(per_direction_maps) == 0:
        raise ValueError("need at least one scan direction")
    if len(per_direction_maps) != len(scan_dirs_rad):
        raise ValueError("one range-Doppler map per scan direction required")
    cols = []
    for rd in per_direction_maps:
        flat_idx = int(np.argmax(rd))
        cols.append(rd[:, flat_idx % rd.shape[1]])
    return RangeAngleMap(values=np.column_stack(cols),
                         range_bin_m=range_bin_m,
                         scan_dirs_rad=np.asarray(scan_dirs_rad, dtype=float),
                         bs_id=bs_id, scan_index=scan_index, synthesis=synthesis)


def range_bin_size_m(params, zero_pad_range=1):
    return SPEED_OF_LIGHT / (2.0 * params.subcarrier_spacing_hz
                             * params.num_subcarriers * zero_pad_range)


def noise_floor_per_bin(params, window="rect"):
    """Expected periodogram value of a noise-only bin after rx combining."""
    base = (params.noise_variance_w * params.num_rx_antennas
            / (params.num_subcarriers * params.sensing_symbols))
    return (base * window_noise_factor(window, params.num_subcarriers)
            * window_noise_factor(window, params.sensing_symbols))


def excision_threshold(params, n_sensing_bs, n_grid_cells, factor=6.0, window="rect"):
    """Detection threshold calibrated to sit above the fused noise floor.

    A fused cell sums up to ``n_sensing_bs`` interpolated noise bins, each
    approximately exponential with the per-bin floor mean; the max over the
    grid concentrates around floor * ln(cells), and ``factor`` adds margin.
    """
    return (factor * n_sensing_bs * noise_floor_per_bin(params, window)
            * math.log(max(n_grid_cells, 2)))


def scan_range_angle_map(bs, reflections, params, seed, scan_index,
                         comm_dir_rad=0.35, zero_pad_range=1, zero_pad_doppler=1,
                         window="rect", include_noise=True):
    """Full signal-level scan of one BS: one rx simulation per beam direction."""
    dirs = bs.scan_directions()
    maps = []
    for d_idx, sense_dir in enumerate(dirs):
        tx = make_tx_grid(params.num_subcarriers, params.sensing_symbols,
                          substream(seed, STREAM_TX, bs.bs_id, scan_index, d_idx))
        weights = tx_beamformer(params, float(sense_dir), comm_dir_rad)
        rx = simulate_rx_grid(tx, weights, reflections, params,
                              substream(seed, STREAM_NOISE, bs.bs_id, scan_index, d_idx),
                              include_noise=include_noise)
        maps.append(range_doppler_map(rx, tx, zero_pad_range, zero_pad_doppler, window))
    return range_angle_map(maps, dirs, range_bin_size_m(params, zero_pad_range),
                           bs_id=bs.bs_id, scan_index=scan_index)


def fast_range_angle_map(bs, reflections, params, seed, scan_index,
                         comm_dir_rad=0.35, zero_pad_range=1, window="rect",
                         include_noise=True):
    """Power-level map synthesis bypassing the symbol-domain simulation.

    Each reflection deposits its combined-beam power onto the two range bins
    bracketing its delay, per scan direction; noise bins are exponential with
    the per-bin floor mean. Maps are flagged ``synthesis="fast"``.
    """
    dirs = bs.scan_directions()
    n_range = params.num_subcarriers * zero_pad_range
    bin_m = range_bin_size_m(params, zero_pad_range)
    if include_noise:
        rng = substream(seed, STREAM_FAST_NOISE, bs.bs_id, scan_index)
        values = rng.exponential(noise_floor_per_bin(params, window),
                                 size=(n_range, len(dirs)))
    else:
        values = np.zeros((n_range, len(dirs)))
    sqrt_gr = math.sqrt(params.rx_element_gain)
    for d_idx, sense_dir in enumerate(dirs):
        weights = tx_beamformer(params, float(sense_dir), comm_dir_rad)
        for refl in reflections:
            if refl.path_gain == 0:
                continue
            a_t = steering_vector(params.num_tx_antennas, refl.doa_rad)
            a_r = steering_vector(params.num_rx_antennas, refl.doa_rad)
            power = np.abs(refl.path_gain * sqrt_gr * (a_t @ weights.tx_weights)
                           * (weights.rx_weights @ a_r)) ** 2
            pos = refl.delay_s * params.subcarrier_spacing_hz * n_range
            lo = int(math.floor(pos))
            frac = pos - lo
            if 0 <= lo < n_range:
                values[lo, d_idx] += power * (1.0 - frac)
            if 0 <= lo + 1 < n_range:
                values[lo + 1, d_idx] += power * frac
    return RangeAngleMap(values=values, range_bin_m=bin_m, scan_dirs_rad=dirs,
                         bs_id=bs.bs_id, scan_index=scan_index, synthesis="fast")
