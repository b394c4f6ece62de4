#include "trajattr/harness.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <sstream>

namespace trajattr::harness {

std::string sha256_hex(const std::string& bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

std::string fmt_double(double x) { return fmt::format("{:.17g}", x); }

void CsvTable::add(std::vector<std::string> row) {
  if (row.size() != columns.size()) {
    throw std::logic_error(fmt::format("csv row has {} cells, expected {}", row.size(), columns.size()));
  }
  rows.push_back(std::move(row));
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  throw std::invalid_argument("csv: no column '" + name + "'");
}

void write_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& metadata,
               const CsvTable& table) {
  std::ostringstream out;
  for (const auto& [k, v] : metadata) out << "# " << k << ": " << v << '\n';
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].find_first_of(",\n\"") != std::string::npos) {
        throw std::logic_error("csv: cell needs quoting: " + cells[i]);
      }
      out << (i ? "," : "") << cells[i];
    }
    out << '\n';
  };
  line(table.columns);
  for (const auto& r : table.rows) line(r);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << out.str();
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  CsvTable t;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (header) {
      t.columns = std::move(cells);
      header = false;
    } else {
      if (cells.size() != t.columns.size()) {
        throw std::runtime_error(fmt::format("{}: malformed row '{}'", path.string(), line));
      }
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

RunRecord RunRecord::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  RunRecord r;
  try {
    const auto j = nlohmann::json::parse(in);
    r.manifest_checksum = j.at("manifest_checksum").get<std::string>();
    r.toolkit_version = j.at("toolkit_version").get<std::string>();
    for (const auto& [name, s] : j.at("stages").items()) {
      StageRecord st;
      st.wall_clock_s = s.at("wall_clock_s").get<double>();
      st.artifacts = s.at("artifacts").get<std::map<std::string, std::string>>();
      r.stages[name] = st;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("{} is corrupt: {}", path.string(), e.what()));
  }
  return r;
}

void RunRecord::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["manifest_checksum"] = manifest_checksum;
  j["toolkit_version"] = toolkit_version;
  j["stages"] = nlohmann::json::object();
  for (const auto& [name, s] : stages) {
    j["stages"][name] = {{"wall_clock_s", s.wall_clock_s}, {"artifacts", s.artifacts}};
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace trajattr::harness
