#pragma once

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <string>

#include <json.hpp>

#include "flowforge/core.hpp"
#include "flowforge/mesh.hpp"

namespace flowforge {

static_assert(std::endian::native == std::endian::little,
              "mesh files are little-endian; big-endian hosts are not supported");

class FileError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public Error {
 public:
  using Error::Error;
};

class TruncatedFileError : public Error {
 public:
  using Error::Error;
};

inline constexpr char kMeshMagic[4] = {'A', 'F', 'M', '1'};

// Layout: magic, u64 num_elements, u64 num_points, lnods as u32[E][4],
// coord as f64[3][P] dimension-major, veloc likewise. All little-endian.
inline void save_mesh(const Mesh& mesh, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FileError("cannot open for writing: " + path);
  f.write(kMeshMagic, 4);
  f.write(reinterpret_cast<const char*>(&mesh.num_elements), 8);
  f.write(reinterpret_cast<const char*>(&mesh.num_points), 8);
  f.write(reinterpret_cast<const char*>(mesh.lnods.data()),
          static_cast<std::streamsize>(mesh.lnods.size() * sizeof(mesh.lnods[0])));
  for (const auto& arr : {std::cref(mesh.coord), std::cref(mesh.veloc)})
    for (const auto& row : arr.get())
      f.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
  if (!f) throw FileError("write failed: " + path);
}

inline Mesh load_mesh(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FileError("cannot open: " + path);

  char magic[4];
  if (!f.read(magic, 4)) throw TruncatedFileError("file shorter than header: " + path);
  if (std::string_view(magic, 4) != std::string_view(kMeshMagic, 4))
    throw BadMagicError("not a mesh file (bad magic): " + path);

  Mesh mesh;
  if (!f.read(reinterpret_cast<char*>(&mesh.num_elements), 8) ||
      !f.read(reinterpret_cast<char*>(&mesh.num_points), 8))
    throw TruncatedFileError("header truncated: " + path);
  if (mesh.num_elements < 1 || mesh.num_points < kNodesPerElem ||
      mesh.num_elements > (1ULL << 32) || mesh.num_points > (1ULL << 32))
    throw InvalidMeshError("implausible element/point counts in header");

  mesh.lnods.resize(mesh.num_elements);
  if (!f.read(reinterpret_cast<char*>(mesh.lnods.data()),
              static_cast<std::streamsize>(mesh.lnods.size() * sizeof(mesh.lnods[0]))))
    throw TruncatedFileError("connectivity truncated: " + path);
  for (auto arr : {&mesh.coord, &mesh.veloc})
    for (auto& row : *arr) {
      row.resize(mesh.num_points);
      if (!f.read(reinterpret_cast<char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(double))))
        throw TruncatedFileError("point data truncated: " + path);
    }
  char extra;
  if (f.read(&extra, 1)) throw InvalidMeshError("trailing bytes after mesh payload");

  validate_mesh(mesh);  // throws InvalidMeshError on range/distinctness/finiteness
  return mesh;
}

inline void export_outputs_csv(const GlobalOutputs& out, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw FileError("cannot open for writing: " + path);
  std::fputs("point,rhsid_x,rhsid_y,rhsid_z,dt_rho,mass_rho\n", f);
  for (std::uint64_t p = 0; p < out.num_points(); ++p)
    std::fprintf(f, "%" PRIu64 ",%.17g,%.17g,%.17g,%.17g,%.17g\n", p, out.rhsid[0][p],
                 out.rhsid[1][p], out.rhsid[2][p], out.dt_rho_nsi[p], out.mass_rho_nsi[p]);
  if (std::fclose(f) != 0) throw FileError("write failed: " + path);
}

// Sidecar describing how a result CSV was produced.
inline void write_run_sidecar(const PhysParams& phys, std::uint64_t mesh_seed,
                              const std::string& path) {
  nlohmann::json j;
  j["phys"] = {{"rho", phys.rho},   {"mu", phys.mu}, {"dt", phys.dt},
               {"grav", phys.grav}, {"c1", phys.c1}, {"c2", phys.c2}};
  j["mesh_seed"] = mesh_seed;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FileError("cannot open for writing: " + path);
  f << j.dump(2) << "\n";
  if (!f) throw FileError("write failed: " + path);
}

}  // namespace flowforge
