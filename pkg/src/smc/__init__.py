from src.smc.coupling import (
    DensitySampler,
    categorical_sample,
    coupling_probability,
    max_couple_categorical,
    max_couple_generic,
    max_couple_generic_batch,
    normalize,
)
from src.smc.kernels import (
    ParticleCloud,
    cbpf_transition,
    cpf_transition,
    forward_pass,
    marginal_cbpf_transition,
    particle_filter,
)
from src.smc.coupled_kernels import (
    CloudRow,
    coupled_cbpf_transition,
    coupled_chain,
    fwd_couple,
    hole_profile,
    predictive_log_density,
)
