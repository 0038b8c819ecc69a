#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "repose/ppo.hpp"

namespace repose {

// Checkpoint container, version 1:
//
//   line 1   "REPOSE-CKPT 1"
//   line 2   one-line JSON header: n_pad, include_count, state_dim, action_dim,
//            layer shapes of both networks, reward weights, hyperparameters,
//            training metadata, payload_doubles, fnv1a64 payload checksum
//   payload  payload_doubles IEEE-754 binary64 values, little endian, in
//            order: policy layers then critic layers, each layer as its
//            out x in weights (row-major) followed by its biases.
inline constexpr std::string_view kCheckpointMagic = "REPOSE-CKPT";
inline constexpr int kCheckpointVersion = 1;

std::string serialize_checkpoint(const PolicyCheckpoint& ckpt);

/// Throws ValidationError on bad magic, unknown version, truncation, checksum
/// failure or inconsistent dimensions.
PolicyCheckpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const PolicyCheckpoint& ckpt, const std::filesystem::path& path);

/// When `expected_n_pad` is set the load fails unless it matches.
PolicyCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::optional<std::size_t> expected_n_pad = std::nullopt);

}  // namespace repose
