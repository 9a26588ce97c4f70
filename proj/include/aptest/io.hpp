#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aptest::io {

// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);
double parse_double(std::string_view text);

std::uint32_t crc32(std::span<const std::byte> bytes);
std::uint32_t crc32(std::string_view text);
std::string crc32_hex(std::uint32_t value);
std::uint32_t file_crc32(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

// Little-endian IEEE-754 binary64 arrays.
void write_f64(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f64(const std::filesystem::path& path);
void append_f64_le(std::string& out, std::span<const double> values);
std::vector<double> decode_f64_le(std::string_view bytes);

// Comma-separated table with a single header line. Cells are not quoted; no
// cell written by this project contains a comma.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::string to_csv(const Table& table);
Table parse_csv(std::string_view text, const std::filesystem::path& origin);
Table read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const Table& table);

}  // namespace aptest::io
