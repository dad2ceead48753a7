#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

namespace tsa {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// SHA-256 over a length-prefixed encoding of `fields` ("<len>:<bytes>" per
/// field, concatenated), so that field boundaries can never be confused.
std::string tuple_digest(std::initializer_list<std::string_view> fields);

}  // namespace tsa
