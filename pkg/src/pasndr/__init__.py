"""Power-amplifier-aware transmit power optimization for OFDM and SC-FDMA.

A soft-limiter PA is modeled through its Bussgang decomposition; the
receiver SNDR is then maximized over the PA input back-off (IBO).
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BracketError,
    DegenerateInputError,
    GridRangeError,
    InvalidArgumentError,
    NumericError,
    OptimizationError,
    PasndrError,
    StorageError,
)
from .montecarlo import (  # noqa: E402
    CoefficientSample,
    CoefficientTable,
    build_table,
    estimate_point,
    interpolate,
    load_table,
    validate_link,
)
from .nonlinearity import (  # noqa: E402
    PAOperatingPoint,
    alpha_by_pdf_integral,
    alpha_ofdm,
    d_ofdm,
    d_tilde_ofdm,
    estimate_bussgang,
    output_power_ofdm,
    soft_limit,
)
from .optimizer import (  # noqa: E402
    fit_linear,
    optimal_sndr_sweep,
    optimize,
    optimize_ofdm,
    optimize_table,
    reference_ibo,
)
from .sndr import Band, ClosedFormOFDM, LinkModel, TableSource, aggregate_channel, sndr_curve, sndr_model, snr_sat  # noqa: E402
from .waveform import (  # noqa: E402
    WaveformConfig,
    WaveformKind,
    dft_precode,
    generate_symbol,
    generate_symbols,
    localized_indices,
    make_constellation,
)
