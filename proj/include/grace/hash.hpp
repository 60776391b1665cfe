#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

namespace grace {

// Incremental SHA-256 (OpenSSL EVP), hex digest.
class Sha256 {
public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::string_view bytes);
  std::string hex();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// Hash of every regular file under dir (relative paths sorted), optionally
// skipping names in `exclude`.
std::string sha256_tree(const std::filesystem::path& dir,
                        std::initializer_list<std::string_view> exclude = {});

}  // namespace grace
