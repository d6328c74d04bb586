#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>

#include "plarseg/synth/sample.hpp"

namespace plarseg::synth {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary PPM (P6, maxval 255). Values are rounded to the nearest 1/255.
void write_ppm(std::ostream& os, const numkit::Tensor& image);
numkit::Tensor read_ppm(std::istream& is);
void write_ppm(const std::filesystem::path& path, const numkit::Tensor& image);
numkit::Tensor read_ppm(const std::filesystem::path& path);

// Binary PGM (P5, maxval 255); gray value = class id, 255 = ignore.
void write_pgm(std::ostream& os, const LabelMap& labels);
LabelMap read_pgm(std::istream& is);
void write_pgm(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_pgm(const std::filesystem::path& path);

}  // namespace plarseg::synth
