#include "kgd/cache.hpp"

#include "kgd/config.hpp"

#include <boost/crc.hpp>

#include <bit>
#include <cctype>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

namespace kgd {

namespace {

constexpr char kMagic[8] = {'K', 'G', 'D', 'C', 'A', 'C', 'H', 'E'};

template <typename T>
void put(std::string& out, T v) {
  using U = std::make_unsigned_t<T>;
  U u = static_cast<U>(v);
  for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

void put_double(std::string& out, double d) { put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(d)); }

std::uint32_t crc32(const char* data, size_t n) {
  boost::crc_32_type crc;
  crc.process_bytes(data, n);
  return crc.checksum();
}

/// Little-endian reader over a byte buffer.
class Cursor {
 public:
  Cursor(const std::string& buf, size_t end) : buf_(buf), end_(end) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > end_) throw CacheError(CacheError::Kind::format, "cache: unexpected end of header");
    std::make_unsigned_t<T> u = 0;
    for (size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  double get_double() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string bytes(size_t n) {
    if (pos_ + n > end_) throw CacheError(CacheError::Kind::format, "cache: unexpected end of header");
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  size_t remaining() const { return end_ - pos_; }

 private:
  const std::string& buf_;
  size_t end_;
  size_t pos_ = 0;
};

}  // namespace

std::string CacheVersion::str() const {
  return std::to_string(major) + "." + std::to_string(minor) + "." + std::to_string(patch);
}

std::string cache_key(const std::string& generator_id, double t, double s) {
  std::ostringstream os;
  os.precision(15);
  os << generator_id << "@(" << t << "," << s << ")";
  return os.str();
}

std::string cache_file_name(const std::string& key) {
  std::string name;
  for (char c : key) name += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
  return name + ".kgdc";
}

void cache_store(const std::string& path, const std::string& key, std::uint64_t config_hash,
                 const std::vector<Mat>& blocks) {
  const std::uint32_t rows = blocks.empty() ? 0 : static_cast<std::uint32_t>(blocks[0].rows());
  const std::uint32_t cols = blocks.empty() ? 0 : static_cast<std::uint32_t>(blocks[0].cols());
  std::string out(kMagic, sizeof kMagic);
  put<std::uint16_t>(out, kCacheVersion.major);
  put<std::uint16_t>(out, kCacheVersion.minor);
  put<std::uint16_t>(out, kCacheVersion.patch);
  put<std::uint64_t>(out, config_hash);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
  out += key;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(blocks.size()));
  put<std::uint32_t>(out, rows);
  put<std::uint32_t>(out, cols);
  out.reserve(out.size() + blocks.size() * rows * cols * 16 + 4);
  for (const Mat& b : blocks) {
    if (b.rows() != rows || b.cols() != cols) throw CacheError(CacheError::Kind::format, "cache: blocks differ in shape");
    for (Eigen::Index i = 0; i < b.rows(); ++i)
      for (Eigen::Index j = 0; j < b.cols(); ++j) {
        put_double(out, b(i, j).real());
        put_double(out, b(i, j).imag());
      }
  }
  put<std::uint32_t>(out, crc32(out.data(), out.size()));

  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CacheError(CacheError::Kind::io, "cache: cannot write '" + tmp + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CacheError(CacheError::Kind::io, "cache: write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

std::vector<Mat> cache_load(const std::string& path, const std::string& key, std::uint64_t config_hash) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CacheError(CacheError::Kind::io, "cache: cannot open '" + path + "'");
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const size_t header = sizeof kMagic + 3 * 2 + 8 + 4;
  if (buf.size() < header + 4)
    throw CacheError(CacheError::Kind::checksum, "cache: checksum error in '" + path + "' (file truncated to " +
                                                     std::to_string(buf.size()) + " bytes)");
  if (std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
    throw CacheError(CacheError::Kind::format, "cache: '" + path + "' is not a kgd cache file (bad magic)");
  const std::string crc_bytes = buf.substr(buf.size() - 4);
  Cursor tail(crc_bytes, 4);
  const std::uint32_t stored_crc = tail.get<std::uint32_t>();
  const std::uint32_t actual_crc = crc32(buf.data(), buf.size() - 4);
  if (stored_crc != actual_crc) {
    std::ostringstream os;
    os << "cache: checksum error in '" << path << "' (stored CRC-32 " << std::hex << stored_crc << ", computed "
       << actual_crc << "; file corrupt or truncated)";
    throw CacheError(CacheError::Kind::checksum, os.str());
  }
  Cursor c(buf, buf.size() - 4);
  c.bytes(sizeof kMagic);
  CacheVersion v;
  v.major = c.get<std::uint16_t>();
  v.minor = c.get<std::uint16_t>();
  v.patch = c.get<std::uint16_t>();
  if (v.major != kCacheVersion.major)
    throw CacheError(CacheError::Kind::format, "cache: '" + path + "' has format version " + v.str() +
                                                   ", this build reads " + kCacheVersion.str());
  const std::uint64_t stored_hash = c.get<std::uint64_t>();
  if (stored_hash != config_hash)
    throw CacheError(CacheError::Kind::stale, "cache: refusing stale entry '" + path + "': stored config hash " +
                                                  hash_hex(stored_hash) + ", current config hash " +
                                                  hash_hex(config_hash));
  const std::string stored_key = c.bytes(c.get<std::uint32_t>());
  if (stored_key != key)
    throw CacheError(CacheError::Kind::key, "cache: '" + path + "' holds key '" + stored_key + "', expected '" + key + "'");
  const std::uint32_t count = c.get<std::uint32_t>(), rows = c.get<std::uint32_t>(), cols = c.get<std::uint32_t>();
  if (c.remaining() != static_cast<size_t>(count) * rows * cols * 16)
    throw CacheError(CacheError::Kind::format, "cache: payload size of '" + path + "' does not match its header");
  std::vector<Mat> blocks(count, Mat(rows, cols));
  for (Mat& b : blocks)
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) {
        const double re = c.get_double();
        b(i, j) = cplx(re, c.get_double());
      }
  return blocks;
}

std::string cache_directory(const std::string& fallback) {
  const char* env = std::getenv(kCacheDirEnv);
  return env && *env ? std::string(env) : fallback;
}

}  // namespace kgd
