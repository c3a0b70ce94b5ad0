#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>

#include "memprior/cli.hpp"
#include "memprior/errors.hpp"

#ifndef MEMPRIOR_VERSION
#define MEMPRIOR_VERSION "unknown"
#endif

namespace memprior::cli {

RunDirectory::RunDirectory(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (dir_.empty()) throw ConfigError("no output directory given (use --out or output_dir)");
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create " + dir_.string() + ": " + ec.message());
  lock_ = dir_ / ".lock";
  const int fd = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw IoError("run directory " + dir_.string() + " is locked by another process (" +
                    lock_.string() + ")");
    }
    throw IoError("cannot lock " + dir_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunDirectory::~RunDirectory() {
  std::error_code ec;
  std::filesystem::remove(lock_, ec);
}

std::uint32_t file_crc32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  uLong crc = crc32(0L, Z_NULL, 0);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    const auto got = in.gcount();
    if (got > 0) crc = crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(got));
  }
  return static_cast<std::uint32_t>(crc);
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_run_manifest(const RunDirectory& run, const ManifestInfo& info) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(run.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), run.path());
    const auto name = rel.generic_string();
    if (name == "manifest.json" || name == ".lock" || name == "manifest.json.tmp") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());

  nlohmann::json listing = nlohmann::json::array();
  for (const auto& rel : files) {
    const auto full = run.path() / rel;
    char crc[9];
    std::snprintf(crc, sizeof crc, "%08x", file_crc32(full));
    listing.push_back({{"path", rel.generic_string()},
                       {"bytes", std::filesystem::file_size(full)},
                       {"crc32", crc}});
  }
  nlohmann::json seeds = nlohmann::json::object();
  for (const auto& [name, value] : info.seeds) seeds[name] = value;
  nlohmann::json doc = {
      {"command", info.command},
      {"version", MEMPRIOR_VERSION},
      {"config", info.config},
      {"seeds", seeds},
      {"started_utc", info.started},
      {"finished_utc", utc_timestamp()},
      {"files", listing},
  };
  for (const auto& [key, value] : info.extra.items()) doc[key] = value;

  const auto tmp = run.file("manifest.json.tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, run.file("manifest.json"));
}

}  // namespace memprior::cli
