#pragma once

#include <stdexcept>
#include <string>

namespace vgh {

enum class Errc {
  invalid_argument,
  io_failure,
  parse_failure,
  degenerate_plane,
  empty_mesh,
  empty_scene,
  unreachable,
  out_of_bounds,
  empty_mask,
  too_few_masks,
  shape_mismatch,
  unknown_cluster,
  diverged,
  no_visible_view,
  empty_ground_truth,
  invalid_depth,
  inconsistent_context,
  malformed_json,
  missing_key,
  invalid_action,
  transport,
  degenerate_segment,
  no_detour,
  insufficient_free_space,
  empty_results,
};

/// Library-wide exception carrying a machine-readable code next to the message.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& message) {
  throw Error(code, message);
}

const char* errc_name(Errc code);

}  // namespace vgh
