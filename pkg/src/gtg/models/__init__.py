from .cnn import ConvStack, conv_stack_backward, conv_stack_forward
from .nlm import NlmLayer, nlm_forward, nlm_layer_backward, nlm_layer_forward
from .policy import (
    FRONT_ENDS,
    GraphBatch,
    GridBatch,
    ModelConfig,
    ObservationSpec,
    PolicyNet,
    policy_forward,
    relation_tensor,
)
from .rgcn import (
    RgcnLayer,
    block_matrix_oracle,
    conv_kernel_to_layer,
    grid_adjacency,
    normalized_adjacency,
    rgcn_conv_equivalence,
    rgcn_forward,
    rgcn_layer_backward,
    rgcn_layer_forward,
)
