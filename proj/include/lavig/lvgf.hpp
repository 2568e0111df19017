#pragma once

// LVGF tensor container, little-endian:
//   "LVGF" | u32 version (=1) | u32 rank | u32 dims[rank] | f32 payload (row-major)

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lavig/tensor.hpp"

namespace lavig::lvgf {

inline constexpr char kMagic[4] = {'L', 'V', 'G', 'F'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kMaxRank = 5;

enum class ParseFailure { bad_magic, bad_version, truncated_header, bad_rank, bad_dims, truncated_payload, trailing_bytes };

const char* failure_message(ParseFailure f);

class ParseError : public std::runtime_error {
 public:
  ParseError(ParseFailure kind, const std::string& context);
  ParseFailure kind() const { return kind_; }

 private:
  ParseFailure kind_;
};

std::vector<unsigned char> encode(const Tensor& t);
Tensor decode(const std::vector<unsigned char>& bytes, const std::string& context = "<memory>");

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace lavig::lvgf
