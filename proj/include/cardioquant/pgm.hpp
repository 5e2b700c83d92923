#pragma once

#include <string>
#include <vector>

#include "cardioquant/tensor.hpp"

namespace cq {

// Binary (P5) PGM with maxval 255. Images travel as [H,W] tensors: gray
// images hold byte/255 in [0,1], label masks hold the raw class ids 0/1/2.

void write_pgm(const std::string& path, int w, int h, const std::vector<unsigned char>& bytes);
std::vector<unsigned char> read_pgm(const std::string& path, int& w, int& h);

void write_image_pgm(const std::string& path, const Tensor& img);
Tensor read_image_pgm(const std::string& path);

void write_label_pgm(const std::string& path, const Tensor& labels);
Tensor read_label_pgm(const std::string& path);

// Quantizes to the 8-bit grid the PGM writer uses, so a tensor that has been
// through quantize_to_bytes round-trips bit-exactly.
void quantize_to_bytes(Tensor& img);

}  // namespace cq
