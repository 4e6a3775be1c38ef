#ifndef TSLR_MODEL_IO_HPP
#define TSLR_MODEL_IO_HPP

#include <string>
#include <vector>

#include "tslr/types.hpp"

namespace tslr {

// Write to `path + ".tmp"` then rename, so readers never see partial files.
void atomic_write(const std::string& path, const std::string& contents);

// FNV-1a digest of a file, hex-encoded; used in run manifests.
std::string file_digest(const std::string& path);

// Per-subject matrix CSV: header `day,c1..cl`, one line per observed day,
// values with at most six fractional digits. num_rows is carried in a
// trailing comment-free sidecar entry inside grid.txt at dataset level.
std::string matrix_to_csv(const SeriesMatrix& m);
SeriesMatrix matrix_from_csv(std::istream& in, const std::string& subject_id);

// Dataset directory: one `<subject>.csv` per subject plus `grid.txt`
// (key=value: period_minutes, sample_minutes, num_rows per subject).
void save_dataset(const Dataset& d, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// Model directory: `basis.csv` (l rows, header F1..Fr),
// `coeffs/<subject>.csv` (header day,C1..Cr), `meta.txt` (key=value).
void save_model(const FactorModel& m, const std::string& dir);
FactorModel load_model(const std::string& dir);

// Binary PGM (P5, maxval 255): observed value v maps to round(255*(1-v)),
// rows absent from the observed set render mid-gray.
std::string matrix_to_pgm(const SeriesMatrix& m);

} // namespace tslr

#endif
