"""swapsim: simulator and analysis toolkit for photonic entanglement swapping
from a quantum-dot biexciton-exciton cascade source."""

from .qstate import (
    BellKind,
    DensityMatrix,
    PureState,
    QStateError,
    bell_density,
    bell_state,
    density_from_json,
    density_to_json,
    fidelity_mixed,
    fidelity_pure,
    horodecki_s,
    maximally_mixed,
    partial_trace,
    permute_qubits,
    project_to_physical,
    pure_density,
    tensor,
)
from .source import (
    NoiseKind,
    NoiseModel,
    SourceError,
    SourceParams,
    apply_noise,
    calibrate,
    dephasing,
    depolarizing,
    emit_pair,
    fss_phase_diffusion,
    ideal_pair,
)
from .interference import (
    BsmConvention,
    BsmPovm,
    InterferenceError,
    TemporalModel,
    beamsplitter_coincidence,
    bsm_povm,
    calibrate_temporal,
    effective_indistinguishability,
    heralding_rate_factor,
    hom_coincidence,
    hom_visibility,
)
from .swap import (
    BoundCheck,
    SwapError,
    SwapResult,
    classical_bound_check,
    compose,
    control_no_heralding,
    herald,
    predict,
)
from .tomography import (
    MeasurementSetting,
    TomographyError,
    TomographyRun,
    bootstrap_errors,
    born_probabilities,
    linear_inversion,
    mle_reconstruct,
    simulate_counts,
    standard_settings,
)
from .mc import (
    ApparatusConfig,
    McError,
    TimestampStream,
    fit_double_exponential,
    fourfold_coincidences,
    fourfold_scan,
    g2_histogram,
    hom_histogram,
    read_stream,
    simulate,
    simulate_tomography_run,
    write_stream,
)
from .config import ConfigError, RunConfig, default_config, load_config

__version__ = "0.1.0"
