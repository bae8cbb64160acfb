#pragma once

#include <filesystem>
#include <string>

#include "plantid/arch/builders.hpp"
#include "plantid/arch/network.hpp"

namespace plantid::arch {

struct Checkpoint {
  BuilderArgs builder;
  Parameters params;
  std::string config_digest;
  std::string checkpoint_id;  // sha256 of the tensor payload; filled in on save and load
};

/// Writes the header (builder args, parameter manifest, digests) and every tensor in spec order.
/// Returns the checkpoint id.
std::string save_checkpoint(const std::filesystem::path& path, Checkpoint& checkpoint);

/// Rebuilds the spec from the stored builder args and rejects any tensor whose shape disagrees with it.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace plantid::arch
