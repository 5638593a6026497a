#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nmt {

using TokenId = std::int32_t;
using Tokens = std::vector<std::string>;
using IdSequence = std::vector<TokenId>;

// Reserved ids. Pad doubles as the cross-entropy ignore id.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kUnkId = 3;
inline constexpr TokenId kNumSpecials = 4;

}  // namespace nmt
