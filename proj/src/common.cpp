#include "dsf/common.hpp"

namespace dsf {

const char* to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::invalid_pose: return "invalid-pose";
    case ErrorCode::empty_render: return "empty-render";
    case ErrorCode::empty_visible_region: return "empty-visible-region";
    case ErrorCode::too_few_points: return "too-few-points";
    case ErrorCode::zero_total_weight: return "zero-total-weight";
    case ErrorCode::degenerate_configuration: return "degenerate-configuration";
    case ErrorCode::singular_system: return "singular-system";
    case ErrorCode::insufficient_valid_texels: return "insufficient-valid-texels";
    case ErrorCode::io_error: return "io-error";
    }
    return "unknown";
}

} // namespace dsf
