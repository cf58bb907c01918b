#pragma once

// Image and volume ingestion plus result emission.
//
// Supported inputs:
//   - binary PGM (P5), 8- or 16-bit, intensities normalized to [0,1]
//   - raw volumes: a flat little-endian array next to a text sidecar
//     "<file>.meta" holding "dims", "dtype" (u8|u16|f32|f64) and "endian"
//   - slice stacks: a directory of equally sized PGM slices assembled in
//     filename order
//
// Label maps are stored with the class index as the raw pixel value and are
// read back without normalization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "palmseg/format.hpp"
#include "palmseg/palm.hpp"
#include "palmseg/phantom.hpp"

namespace palmseg {

namespace detail {

inline std::ifstream open_binary_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    return in;
}

inline std::ofstream open_binary_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    return out;
}

// Reads one whitespace-delimited PGM header token, skipping '#' comments.
inline std::string pgm_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {}
        } else if (!std::isspace(ch)) {
            tok.push_back(static_cast<char>(ch));
            while ((ch = in.peek()) != EOF && !std::isspace(ch)) tok.push_back(static_cast<char>(in.get()));
            return tok;
        }
    }
    throw std::runtime_error("truncated PGM header");
}

struct PgmData {
    int width = 0;
    int height = 0;
    int maxval = 0;
    std::vector<std::uint32_t> samples; // row-major, x fastest
};

inline PgmData read_pgm(const std::string& path) {
    std::ifstream in = open_binary_in(path);
    if (pgm_token(in) != "P5") throw std::runtime_error("not a binary PGM (P5): " + path);
    PgmData d;
    d.width = std::stoi(pgm_token(in));
    d.height = std::stoi(pgm_token(in));
    d.maxval = std::stoi(pgm_token(in));
    if (d.width < 1 || d.height < 1 || d.maxval < 1 || d.maxval > 65535)
        throw std::runtime_error("invalid PGM header: " + path);
    in.get(); // single whitespace terminates the header
    const std::size_t n = static_cast<std::size_t>(d.width) * static_cast<std::size_t>(d.height);
    const int bytes = d.maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(n * static_cast<std::size_t>(bytes));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw std::runtime_error("truncated PGM data: " + path);
    d.samples.resize(n);
    if (bytes == 1) {
        for (std::size_t i = 0; i < n; ++i) d.samples[i] = raw[i];
    } else {
        // PGM stores 16-bit samples most significant byte first
        for (std::size_t i = 0; i < n; ++i)
            d.samples[i] = (static_cast<std::uint32_t>(raw[2 * i]) << 8) | raw[2 * i + 1];
    }
    return d;
}

inline void write_pgm(const std::string& path, int width, int height, int maxval,
                      std::span<const std::uint32_t> samples) {
    std::ofstream out = open_binary_out(path);
    out << "P5\n" << width << " " << height << "\n" << maxval << "\n";
    if (maxval > 255) {
        for (std::uint32_t s : samples) {
            const unsigned char hi = static_cast<unsigned char>((s >> 8) & 0xff);
            const unsigned char lo = static_cast<unsigned char>(s & 0xff);
            out.put(static_cast<char>(hi));
            out.put(static_cast<char>(lo));
        }
    } else {
        for (std::uint32_t s : samples) out.put(static_cast<char>(s & 0xff));
    }
    if (!out) throw std::runtime_error("failed writing PGM: " + path);
}

struct VolumeMeta {
    std::vector<int> dims;
    std::string dtype = "f32";
    std::string endian = "little";
};

inline VolumeMeta read_meta(const std::string& meta_path) {
    std::ifstream in(meta_path);
    if (!in) throw std::runtime_error("missing volume sidecar: " + meta_path);
    VolumeMeta m;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;
        if (key == "dims") {
            int v;
            m.dims.clear();
            while (ls >> v) m.dims.push_back(v);
        } else if (key == "dtype") {
            ls >> m.dtype;
        } else if (key == "endian") {
            ls >> m.endian;
        }
    }
    if (m.dims.size() < 2 || m.dims.size() > 3)
        throw std::runtime_error("volume sidecar must give 2 or 3 dims: " + meta_path);
    if (m.endian != "little")
        throw std::runtime_error("only little-endian volumes are supported: " + meta_path);
    return m;
}

inline void write_meta(const std::string& meta_path, const GridShape& shape, const std::string& dtype) {
    std::ofstream out(meta_path);
    if (!out) throw std::runtime_error("cannot write volume sidecar: " + meta_path);
    out << "dims";
    for (int e : shape.extents()) out << " " << e;
    out << "\ndtype " << dtype << "\nendian little\n";
}

} // namespace detail

inline GridImage load_pgm(const std::string& path) {
    const detail::PgmData d = detail::read_pgm(path);
    GridImage img(GridShape{d.width, d.height});
    for (std::size_t i = 0; i < d.samples.size(); ++i)
        img.values[i] = static_cast<double>(d.samples[i]) / static_cast<double>(d.maxval);
    return img;
}

// Values are clamped to [0,1] and quantized to the requested bit depth.
inline void save_pgm(const GridImage& img, const std::string& path, int bits = 8) {
    if (img.shape.ndim() != 2) throw std::invalid_argument("save_pgm: image must be 2D");
    if (bits != 8 && bits != 16) throw std::invalid_argument("save_pgm: bits must be 8 or 16");
    const std::uint32_t maxval = bits == 8 ? 255u : 65535u;
    std::vector<std::uint32_t> samples(img.values.size());
    for (std::size_t i = 0; i < img.values.size(); ++i) {
        const double v = std::clamp(img.values[i], 0.0, 1.0);
        samples[i] = static_cast<std::uint32_t>(std::lround(v * static_cast<double>(maxval)));
    }
    detail::write_pgm(path, img.shape.extent(0), img.shape.extent(1), static_cast<int>(maxval), samples);
}

inline GridImage load_raw_volume(const std::string& path) {
    const detail::VolumeMeta meta = detail::read_meta(path + ".meta");
    GridShape shape(meta.dims);
    const std::size_t n = shape.pixels();
    std::ifstream in = detail::open_binary_in(path);

    std::size_t elem = 0;
    if (meta.dtype == "u8") elem = 1;
    else if (meta.dtype == "u16") elem = 2;
    else if (meta.dtype == "f32") elem = 4;
    else if (meta.dtype == "f64") elem = 8;
    else throw std::runtime_error("unsupported volume dtype: " + meta.dtype);

    std::vector<unsigned char> raw(n * elem);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw std::runtime_error("volume size does not match sidecar dims: " + path);

    GridImage img(shape);
    if (meta.dtype == "u8") {
        for (std::size_t i = 0; i < n; ++i) img.values[i] = raw[i] / 255.0;
    } else if (meta.dtype == "u16") {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint16_t v;
            std::memcpy(&v, raw.data() + 2 * i, 2);
            img.values[i] = v / 65535.0;
        }
    } else if (meta.dtype == "f32") {
        for (std::size_t i = 0; i < n; ++i) {
            float v;
            std::memcpy(&v, raw.data() + 4 * i, 4);
            img.values[i] = static_cast<double>(v);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            double v;
            std::memcpy(&v, raw.data() + 8 * i, 8);
            img.values[i] = v;
        }
    }
    return img;
}

inline void save_raw_volume(const GridImage& img, const std::string& path,
                            const std::string& dtype = "f32") {
    std::ofstream out = detail::open_binary_out(path);
    if (dtype == "u8" || dtype == "u16") {
        const double maxval = dtype == "u8" ? 255.0 : 65535.0;
        for (double v : img.values) {
            const std::uint32_t q =
                static_cast<std::uint32_t>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
            if (dtype == "u8") {
                out.put(static_cast<char>(q & 0xff));
            } else {
                const std::uint16_t w = static_cast<std::uint16_t>(q);
                out.write(reinterpret_cast<const char*>(&w), 2);
            }
        }
    } else if (dtype == "f32") {
        for (double v : img.values) {
            const float w = static_cast<float>(v);
            out.write(reinterpret_cast<const char*>(&w), 4);
        }
    } else if (dtype == "f64") {
        out.write(reinterpret_cast<const char*>(img.values.data()),
                  static_cast<std::streamsize>(img.values.size() * 8));
    } else {
        throw std::invalid_argument("save_raw_volume: unsupported dtype " + dtype);
    }
    if (!out) throw std::runtime_error("failed writing volume: " + path);
    detail::write_meta(path + ".meta", img.shape, dtype);
}

inline GridImage load_slice_stack(const std::string& dirpath) {
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dirpath))
        if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path().string());
    if (files.empty()) throw std::runtime_error("no .pgm slices in directory: " + dirpath);
    std::sort(files.begin(), files.end());

    std::vector<detail::PgmData> slices;
    slices.reserve(files.size());
    for (const std::string& f : files) {
        slices.push_back(detail::read_pgm(f));
        if (slices.back().width != slices.front().width ||
            slices.back().height != slices.front().height)
            throw std::runtime_error("inconsistent slice shapes in stack: " + f);
    }
    GridShape shape{slices.front().width, slices.front().height, static_cast<int>(slices.size())};
    GridImage img(shape);
    const std::size_t per = static_cast<std::size_t>(slices.front().width) *
                            static_cast<std::size_t>(slices.front().height);
    for (std::size_t s = 0; s < slices.size(); ++s)
        for (std::size_t i = 0; i < per; ++i)
            img.values[s * per + i] =
                static_cast<double>(slices[s].samples[i]) / static_cast<double>(slices[s].maxval);
    return img;
}

// Dispatch on the path: directory = slice stack, *.raw = raw volume with
// sidecar, anything else PGM.
inline GridImage load_image(const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::is_directory(path)) return load_slice_stack(path);
    if (!fs::exists(path)) throw std::runtime_error("no such file: " + path);
    if (fs::path(path).extension() == ".raw") return load_raw_volume(path);
    return load_pgm(path);
}

// Class indices stored as raw pixel values (no normalization).
inline void save_label_map(std::span<const int> labels, const GridShape& shape,
                           const std::string& path) {
    int maxlab = 1;
    for (int l : labels) maxlab = std::max(maxlab, l);
    if (maxlab > 255)
        throw std::invalid_argument("save_label_map: more than 256 classes not supported");
    if (shape.ndim() == 2) {
        std::vector<std::uint32_t> samples(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i)
            samples[i] = static_cast<std::uint32_t>(labels[i]);
        detail::write_pgm(path, shape.extent(0), shape.extent(1), maxlab, samples);
    } else {
        std::ofstream out = detail::open_binary_out(path);
        for (int l : labels) out.put(static_cast<char>(l & 0xff));
        if (!out) throw std::runtime_error("failed writing label volume: " + path);
        detail::write_meta(path + ".meta", shape, "u8");
    }
}

inline std::pair<std::vector<int>, GridShape> load_label_map(const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::path(path).extension() == ".raw") {
        const detail::VolumeMeta meta = detail::read_meta(path + ".meta");
        if (meta.dtype != "u8") throw std::runtime_error("label volumes must be u8: " + path);
        GridShape shape(meta.dims);
        std::ifstream in = detail::open_binary_in(path);
        std::vector<unsigned char> raw(shape.pixels());
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (static_cast<std::size_t>(in.gcount()) != raw.size())
            throw std::runtime_error("truncated label volume: " + path);
        return {std::vector<int>(raw.begin(), raw.end()), shape};
    }
    const detail::PgmData d = detail::read_pgm(path);
    std::vector<int> labels(d.samples.begin(), d.samples.end());
    return {labels, GridShape{d.width, d.height}};
}

inline void write_trace_csv(const SolveTrace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write trace: " + path);
    out << "iter,energy,data,tv,smooth,max_simplex_violation,mean_l,seconds\n";
    for (const TraceRow& r : trace.rows) {
        out << r.iter << ',' << format_number(r.energy) << ',' << format_number(r.data) << ','
            << format_number(r.tv) << ',' << format_number(r.smooth) << ','
            << format_number(r.max_simplex_violation) << ',' << format_number(r.mean_l) << ','
            << format_number(r.seconds) << '\n';
    }
}

// Writes the label map, one binary mask per class, the illumination in
// display scale (plus its true range and the raw log field), the codebook in
// linear domain, the energy trace, and a misclassification report when the
// ground truth is given.  Returns the paths written.
inline std::vector<std::string> emit_results(const SolveResult& result, const std::string& outdir,
                                             const std::vector<int>* truth = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(outdir);
    const GridShape& shape = result.l.shape;
    const bool flat = shape.ndim() == 2;
    std::vector<std::string> written;
    auto out = [&](const std::string& name) {
        written.push_back((fs::path(outdir) / name).string());
        return written.back();
    };

    save_label_map(result.labels, shape, out(flat ? "labels.pgm" : "labels.raw"));

    for (int k = 0; k < result.u.num_classes; ++k) {
        GridImage mask(shape);
        for (std::size_t j = 0; j < mask.values.size(); ++j)
            mask.values[j] = result.labels[j] == k ? 1.0 : 0.0;
        const std::string name = "mask_" + std::to_string(k) + (flat ? ".pgm" : ".raw");
        if (flat) save_pgm(mask, out(name), 8);
        else save_raw_volume(mask, out(name), "u8");
    }

    // linear-domain illumination, rescaled to [0,1] for display
    GridImage L(shape);
    for (std::size_t j = 0; j < L.values.size(); ++j) L.values[j] = std::exp(result.l.values[j]);
    const auto [lo_it, hi_it] = std::minmax_element(L.values.begin(), L.values.end());
    const double lo = *lo_it, hi = *hi_it;
    GridImage display(shape);
    for (std::size_t j = 0; j < L.values.size(); ++j)
        display.values[j] = hi > lo ? (L.values[j] - lo) / (hi - lo) : 0.5;
    if (flat) save_pgm(display, out("illumination.pgm"), 8);
    else save_raw_volume(display, out("illumination.raw"), "u16");
    {
        std::ofstream range(out("illumination_range.txt"));
        range << "min " << format_number(lo) << "\nmax " << format_number(hi) << "\n";
    }
    save_raw_volume(result.l, out("illumination_log.raw"), "f32");
    written.push_back((fs::path(outdir) / "illumination_log.raw.meta").string());

    {
        std::ofstream cb(out("codebook.txt"));
        for (double c : result.c.centers) cb << format_number(std::exp(c)) << "\n";
    }

    write_trace_csv(result.trace, out("trace.csv"));

    if (truth) {
        const Misclassification mc = misclassified(result.labels, *truth);
        std::ofstream rep(out("misclassification.txt"));
        rep << "count " << mc.count << "\npercent " << format_number(mc.percent) << "\n";
    }
    return written;
}

} // namespace palmseg
