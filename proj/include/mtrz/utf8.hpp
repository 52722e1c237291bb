#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mtrz::utf8 {

// Decodes UTF-8 into code points. Invalid bytes decode to U+FFFD one byte at a time.
std::vector<char32_t> decode(std::string_view text);

std::string encode(char32_t code_point);
std::string encode(const std::vector<char32_t>& code_points);

bool is_space(char32_t c);
bool is_punct(char32_t c);

// Number of unicode scalar values.
std::size_t length(std::string_view text);

std::string trim(std::string_view text);
bool is_blank(std::string_view text);

}  // namespace mtrz::utf8
