"""Simulation, maximum-entropy reconstruction and decoherence of cavity field states."""

__version__ = "0.1.0"

from .fock import (  # noqa: F401
    FieldState,
    coherent_state,
    displacement_operator,
    fidelity,
    hermitian_exp,
    ladder_operators,
    parity_operator,
    translate,
)
from .dispersive import DispersiveParams, calibrate_teff, phase_operator, phase_shift, phase_slope  # noqa: F401
from .measurement import (  # noqa: F401
    DetectionRecord,
    ImperfectionModel,
    MeasurementSetting,
    correct_signal,
    expected_signal,
    g_operator,
    ramsey_kraus,
    sample_detections,
)
from .prepare import CatSpec, QndPlan, cat_size, prepare_cat, qnd_project  # noqa: F401
from .maxent import ConstraintSet, bootstrap_errorbars, dual_value_and_gradient, entropy, reconstruct  # noqa: F401
from .dynamics import (  # noqa: F401
    CavityParams,
    CoherenceSeries,
    coherence_metric,
    decoherence_movie,
    fit_exponential_offset,
    lindblad_evolve,
    predicted_td,
    rescale_translation,
    translated_matrix,
)
from .wigner import WignerGrid, negativity_volume, wigner_at, wigner_grid  # noqa: F401
