// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

namespace emforge {

// Byte-level vocabulary: ids 0-255 are raw bytes, followed by four specials.
inline constexpr std::int32_t kImgToken = 256;
inline constexpr std::int32_t kPadToken = 257;
inline constexpr std::int32_t kBosToken = 258;
inline constexpr std::int32_t kEosToken = 259;
inline constexpr std::size_t kVocabSize = 260;

// The only escape sequence in rendered text: replaced by kImgToken.
inline constexpr std::string_view kImageMarker = "[IMG]";

// [BOS, bytes..., EOS]. When the result would exceed max_tokens the prefix is
// kept and EOS re-appended. max_tokens must be at least 2.
std::vector<std::int32_t> tokenize_text(std::string_view text,
                                        std::size_t max_tokens = std::numeric_limits<std::size_t>::max());

// Inverse of tokenize_text for untruncated input: BOS/EOS/PAD are dropped,
// kImgToken renders as "[IMG]".
std::string decode_tokens(const std::vector<std::int32_t>& ids);

}  // namespace emforge
