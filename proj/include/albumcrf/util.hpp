#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace albumcrf {

// Kahan-compensated sum.
double stable_sum(const std::vector<double>& values);

double dot(const std::vector<double>& a, const std::vector<double>& b);
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks over a
// fixed thread count so results land in caller-owned slots deterministically.
// threads == 0 picks hardware concurrency; n below the grain runs serially.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  unsigned threads = 0);

// Whole-file text I/O; paths ending in ".gz" go through zlib.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

std::string format_double(double v, int precision);

}  // namespace albumcrf
