#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "nucleigan/nn.hpp"

namespace nucleigan {

inline constexpr const char* kCheckpointHeader = "nucleigan-ckpt-v1";

/// Single-file archive:
///   line 1: "nucleigan-ckpt-v1"
///   line 2: JSON {"spec": ..., "dtype": "f32"|"f64", "tensors": [{name, kind, shape, count}],
///                 "extra": <caller JSON>}
///   then the raw little-endian arrays in the listed order.
/// Written atomically (temp file + rename).
template <class T>
void save_checkpoint(const std::filesystem::path& path, Network<T>& net,
                     const std::string& extra_json = "{}");

/// Rebuilds the network from the stored spec and restores parameters and
/// spectral-norm vectors. `extra_json` receives the caller payload if given.
template <class T>
std::unique_ptr<Network<T>> load_checkpoint(const std::filesystem::path& path,
                                            std::string* extra_json = nullptr);

NetworkSpec read_checkpoint_spec(const std::filesystem::path& path);

}  // namespace nucleigan
