#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wmbench/image.hpp"

namespace wmbench {

/// Deterministic textured-shapes image: smooth two-color background with
/// low-frequency shading, a handful of filled shapes and fine grain.
Image procedural_image(std::uint64_t seed, int size = 64);

/// `count` procedural images derived from `seed` (image i uses derive_seed(seed, i)).
std::vector<Image> procedural_corpus(std::uint64_t seed, std::size_t count, int size = 64);

struct DatasetEntry {
    std::string id;
    std::string sha256;  // of the decoded RGB float payload
    Image image;
};

/// Loads every *.png in `dir` (sorted by file name), resized to `size`×`size`.
/// Unreadable files raise IngestionFailed.
std::vector<DatasetEntry> ingest_directory(const std::filesystem::path& dir, int size = 64);

std::string image_sha256(const Image& image);

}  // namespace wmbench
