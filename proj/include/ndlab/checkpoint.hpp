#pragma once

#include <string>

#include "ndlab/params.hpp"

namespace ndlab {

// Binary checkpoint: magic "NDLABCK1", a caller-supplied UTF-8 header blob
// (model description), then each tensor in store order as
// name / trainable flag / rows / cols / raw little-endian doubles.
// save -> load -> save produces identical bytes.
void save_checkpoint(const std::string& path, const std::string& header,
                     const ParamStore& params);

struct Checkpoint {
  std::string header;
  ParamStore params;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace ndlab
