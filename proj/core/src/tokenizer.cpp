// SPDX-License-Identifier: Apache-2.0
#include "emforge/tokenizer.hpp"

#include "emforge/error.hpp"

namespace emforge {

std::vector<std::int32_t> tokenize_text(std::string_view text, std::size_t max_tokens) {
  if (max_tokens < 2) throw ConfigError("tokenize_text: token budget must be at least 2");
  std::vector<std::int32_t> ids;
  ids.reserve(std::min(max_tokens, text.size() + 2));
  ids.push_back(kBosToken);
  std::size_t i = 0;
  while (i < text.size() && ids.size() < max_tokens - 1) {
    if (text.substr(i, kImageMarker.size()) == kImageMarker) {
      ids.push_back(kImgToken);
      i += kImageMarker.size();
    } else {
      ids.push_back(static_cast<std::int32_t>(static_cast<unsigned char>(text[i])));
      ++i;
    }
  }
  ids.push_back(kEosToken);
  return ids;
}

std::string decode_tokens(const std::vector<std::int32_t>& ids) {
  std::string out;
  for (auto id : ids) {
    if (id >= 0 && id < 256) {
      out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    } else if (id == kImgToken) {
      out.append(kImageMarker);
    }
  }
  return out;
}

}  // namespace emforge
