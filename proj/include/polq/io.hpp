#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace polq {

/// Shortest round-trip decimal form of a double ('.' separator, locale-free).
std::string format_double(double v);

/// Minimal CSV emitter: comma separated, '\n' line endings, numbers via
/// format_double so output is byte-stable.
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& os) : os_(os) {}
  CsvWriter& header(const std::vector<std::string>& names);
  CsvWriter& field(double v);
  CsvWriter& field(long long v);
  CsvWriter& field(int v) { return field(static_cast<long long>(v)); }
  CsvWriter& field(const std::string& v);
  CsvWriter& end_row();

 private:
  void sep();
  std::ostream& os_;
  bool first_ = true;
};

void write_text_file(const std::filesystem::path& path, const std::string& text);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);

}  // namespace polq
