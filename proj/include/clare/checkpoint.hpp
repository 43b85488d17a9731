#pragma once

#include <string>

#include "clare/blob.hpp"
#include "clare/policy.hpp"

namespace clare {

constexpr int kCheckpointFormatVersion = 1;

// A checkpoint is <base>.json (manifest: format version, backbone config,
// normalizer, stage, bank topology with per-discriminator stats and links)
// plus <base>.blob (all parameters, f32 storage). save(load(x)) is
// byte-identical to x.
void save_checkpoint(const PolicyModel& m, const std::string& base);
PolicyModel load_checkpoint(const std::string& base);

}  // namespace clare
