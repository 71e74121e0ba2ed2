#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bem/balance.hpp"
#include "bem/learner.hpp"

// Binary container: magic "BEMC", u32 version, u32 section count, then per
// section u32 name length, name bytes, u64 payload length, payload bytes.
// All integers and floats little-endian.
namespace bem::checkpoint {

inline constexpr std::uint32_t kVersion = 1;

struct Section {
  std::string name;
  std::string payload;

  bool operator==(const Section&) const = default;
};

std::string encode_container(const std::vector<Section>& sections);
std::vector<Section> decode_container(std::string_view bytes);

void write_container(const std::filesystem::path& path, const std::vector<Section>& sections);
std::vector<Section> read_container(const std::filesystem::path& path);

std::string encode_balance(const balance::ClassBalanceState& state);
balance::ClassBalanceState decode_balance(std::string_view payload);

// Everything that evolves during training.
std::vector<Section> capture(learner::Trainer& trainer);
// The trainer must have been built from the same config and dataset.
void restore(learner::Trainer& trainer, const std::vector<Section>& sections);

void save(const std::filesystem::path& path, learner::Trainer& trainer);
void load(const std::filesystem::path& path, learner::Trainer& trainer);

}  // namespace bem::checkpoint
