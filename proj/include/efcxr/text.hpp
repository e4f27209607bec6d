#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Small string, CSV and file helpers shared by the pipeline stages.
namespace efcxr::text {

std::string trim(std::string_view s);
std::string lower(std::string_view s);
std::string upper(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

/// Formats a double with the shortest representation that round-trips.
std::string format_double(double v);

/// Parsed CSV table: header row plus data rows. Fields may be quoted with
/// double quotes; embedded quotes are doubled. CR before LF is tolerated.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of `name` in the header; throws SchemaError naming the column and
  /// `source` when absent.
  std::size_t column(std::string_view name, std::string_view source = {}) const;
  std::optional<std::size_t> find_column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view content, std::string_view source = {});
CsvTable read_csv(const std::filesystem::path& path);

/// Quotes a field only when it contains a separator, quote or newline.
std::string csv_escape(std::string_view field);
std::string csv_line(const std::vector<std::string>& fields);

std::string read_file(const std::filesystem::path& path);

/// Writes to `<path>.tmp` then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Lower-case hex SHA-256 of the file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace efcxr::text
