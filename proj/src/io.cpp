#include "polq/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>

#include "polq/error.hpp"

namespace polq {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void CsvWriter::sep() {
  if (!first_) os_ << ',';
  first_ = false;
}

CsvWriter& CsvWriter::header(const std::vector<std::string>& names) {
  for (const auto& n : names) field(n);
  return end_row();
}

CsvWriter& CsvWriter::field(double v) {
  sep();
  os_ << format_double(v);
  return *this;
}

CsvWriter& CsvWriter::field(long long v) {
  sep();
  os_ << v;
  return *this;
}

CsvWriter& CsvWriter::field(const std::string& v) {
  sep();
  if (v.find_first_of(",\"\n") == std::string::npos) {
    os_ << v;
  } else {
    os_ << '"';
    for (char c : v) {
      if (c == '"') os_ << '"';
      os_ << c;
    }
    os_ << '"';
  }
  return *this;
}

CsvWriter& CsvWriter::end_row() {
  os_ << '\n';
  first_ = true;
  return *this;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

}  // namespace polq
