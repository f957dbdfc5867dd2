#pragma once

#include <cstdint>
#include <string>

#include "cmml/params.hpp"

namespace cmml {

// Versioned plain-text archive of named arrays. Values are serialized as
// hexadecimal floats, so load followed by save reproduces the file byte for
// byte.
struct Checkpoint {
  int version = 1;
  int epoch = 0;
  std::string config_json;  // canonical single-line snapshot
  ParamMap params;
  ParamMap adam_m;
  ParamMap adam_v;
  std::int64_t adam_t = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cmml
