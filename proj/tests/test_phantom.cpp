#include <doctest.h>

#include <cmath>

#include "hedi/errors.hpp"
#include "hedi/metrics.hpp"
#include "hedi/phantom.hpp"
#include "hedi/preprocess.hpp"

using namespace hedi;

TEST_CASE("make_phantom labels and volumes") {
    PhantomSpec spec = default_phantom_spec({96, 96, 96});
    Phantom ph = make_phantom(spec);

    SUBCASE("cavity volume matches the analytic ellipsoid within 2%") {
        double v = volume_of_label(ph.labels, LabelCodes::abdominal_cavity);
        const Vec3& a = spec.cavity.semi_axes;
        double analytic = 4.0 / 3.0 * M_PI * a.x * a.y * a.z;
        CHECK(std::abs(v - analytic) / analytic < 0.02);
    }
    SUBCASE("table slab voxels are background-labeled tissue at HU 200") {
        PhantomSpec with_table = spec;
        with_table.table_hu = 200.0f;
        Phantom pt = make_phantom(with_table);
        const Grid& g = pt.image.grid;
        size_t slab = 0;
        for (int k = 0; k < g.dims[2]; ++k)
            for (int j = 0; j < g.dims[1]; ++j)
                for (int i = 0; i < g.dims[0]; ++i) {
                    size_t q = g.index(i, j, k);
                    if (pt.image.voxels[q] == 200.0f) {
                        ++slab;
                        CHECK(pt.labels.voxels[q] == 0.0f);
                    }
                }
        CHECK(slab > 0);
    }
    SUBCASE("hernia ellipsoid labels the bump outside the cavity") {
        PhantomSpec hs = spec;
        Vec3 c = hs.body.center;
        c.y -= hs.body.semi_axes.y;
        hs.hernia = Ellipsoid{c, {12, 10, 12}};
        Phantom p = make_phantom(hs);
        CHECK(volume_of_label(p.labels, LabelCodes::hernia_sac) > 0.0);
    }
    SUBCASE("generation is deterministic") {
        Phantom again = make_phantom(spec);
        CHECK(again.image.voxels == ph.image.voxels);
        CHECK(again.labels.voxels == ph.labels.voxels);
    }
}

TEST_CASE("phantom spec validation") {
    PhantomSpec spec = default_phantom_spec({32, 32, 32});
    SUBCASE("cavity leaking outside the body") {
        spec.cavity.semi_axes = spec.body.semi_axes;  // touches the surface
        CHECK_THROWS_AS(make_phantom(spec), InvalidSpec);
    }
    SUBCASE("hernia that does not straddle the boundary") {
        spec.hernia = Ellipsoid{spec.body.center, {1, 1, 1}};  // strictly inside
        CHECK_THROWS_AS(make_phantom(spec), InvalidSpec);
    }
    SUBCASE("non-positive dims") {
        spec.dims = {0, 32, 32};
        CHECK_THROWS_AS(make_phantom(spec), InvalidSpec);
    }
}

TEST_CASE("evaluate_warp closed forms") {
    SUBCASE("translation is constant") {
        AnalyticWarp w = make_translation_warp({9, 0, 0});
        Vec3 u = evaluate_warp(w, {123.4, -5.0, 7.7});
        CHECK(u.x == 9.0);
        CHECK(u.y == 0.0);
        CHECK(u.z == 0.0);
    }
    SUBCASE("linear scaling") {
        Mat3 a{};
        a(0, 0) = a(1, 1) = a(2, 2) = 0.1;  // (s-1) I with s = 1.1
        AnalyticWarp w = make_linear_warp(a);
        Vec3 u = evaluate_warp(w, {10, 0, 0});
        CHECK(u.x == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(u.y == doctest::Approx(0.0));
    }
    SUBCASE("bulge peaks at its center along the direction") {
        AnalyticWarp w = make_bulge_warp({50, 50, 50}, 30, 60, {0, 1, 0});
        Vec3 u = evaluate_warp(w, {50, 50, 50});
        CHECK(u.x == doctest::Approx(0.0));
        CHECK(u.y == doctest::Approx(30.0).epsilon(1e-12));
    }
    SUBCASE("bulge rejects peak/sigma beyond 0.6") {
        CHECK_THROWS_AS(make_bulge_warp({0, 0, 0}, 37, 60, {0, 1, 0}), InvalidSpec);
    }
}

TEST_CASE("analytic Jacobian matches finite differences") {
    AnalyticWarp w = make_bulge_warp({40, 40, 40}, 24, 50, {0.3, 0.9, 0.1});
    const double h = 1e-5;
    for (const Vec3& p : {Vec3{40, 40, 40}, Vec3{10, 60, 35}, Vec3{70, 20, 55}}) {
        Mat3 jac = warp_displacement_jacobian(w, p);
        for (int c = 0; c < 3; ++c) {
            Vec3 dp = p;
            dp[c] += h;
            Vec3 dm = p;
            dm[c] -= h;
            Vec3 fd = (evaluate_warp(w, dp) - evaluate_warp(w, dm)) / (2 * h);
            for (int r = 0; r < 3; ++r) CHECK(jac(r, c) == doctest::Approx(fd[r]).epsilon(1e-6));
        }
    }
}

TEST_CASE("apply_warp") {
    PhantomSpec spec = default_phantom_spec({96, 96, 96});
    Phantom ph = make_phantom(spec);

    SUBCASE("zero translation is the identity") {
        ImageVolume same = apply_warp(ph.image, make_translation_warp({0, 0, 0}));
        CHECK(same.voxels == ph.image.voxels);
    }
    SUBCASE("translation moves the mask centroid by 9 mm") {
        ImageVolume moved = apply_warp(ph.image, make_translation_warp({9, 0, 0}));
        auto centroid = [](const ImageVolume& img) {
            const Grid& g = img.grid;
            double sx = 0, n = 0;
            for (int k = 0; k < g.dims[2]; ++k)
                for (int j = 0; j < g.dims[1]; ++j)
                    for (int i = 0; i < g.dims[0]; ++i)
                        if (img.voxels[g.index(i, j, k)] > -500.0f) {
                            sx += g.index_to_world(i, j, k).x;
                            n += 1;
                        }
            return sx / n;
        };
        CHECK(centroid(moved) - centroid(ph.image) == doctest::Approx(9.0).epsilon(0.012));
    }
    SUBCASE("bulge volume change matches the Jacobian integral within 3%") {
        Vec3 c = spec.body.center;
        c.y -= spec.body.semi_axes.y;
        AnalyticWarp w = make_bulge_warp(c, 15, 30, {0, -1, 0});
        ImageVolume warped = apply_warp(ph.image, w);
        ImageVolume mask_before = body_mask(ph.image);
        ImageVolume mask_after = body_mask(warped);

        const Grid& g = ph.image.grid;
        double voxvol = g.spacing.x * g.spacing.y * g.spacing.z;
        double predicted = 0.0;  // integral of det(I + grad u) over the rest body
        double before = 0.0, after = 0.0;
        for (int k = 0; k < g.dims[2]; ++k)
            for (int j = 0; j < g.dims[1]; ++j)
                for (int i = 0; i < g.dims[0]; ++i) {
                    size_t q = g.index(i, j, k);
                    if (mask_before.voxels[q] > 0) {
                        Mat3 f = Mat3::identity() + warp_displacement_jacobian(w, g.index_to_world(i, j, k));
                        predicted += f.det() * voxvol;
                        before += voxvol;
                    }
                    if (mask_after.voxels[q] > 0) after += voxvol;
                }
        CHECK(before > 0);
        CHECK(std::abs(after - predicted) / predicted < 0.03);
    }
    SUBCASE("ground-truth field is self-consistent under fixed-point inversion") {
        AnalyticWarp w = make_bulge_warp({48, 30, 48}, 20, 40, {0, -1, 0});
        for (const Vec3& y : {Vec3{48, 25, 48}, Vec3{60, 40, 40}, Vec3{30, 50, 66}}) {
            Vec3 v = evaluate_warp(w, y);
            for (int it = 0; it < 20; ++it) v = evaluate_warp(w, y - v);
            CHECK((v - evaluate_warp(w, y - v)).norm() < 1e-3);
        }
    }
}

TEST_CASE("ground_truth_field samples the warp on the grid") {
    Grid grid{{8, 8, 8}, {2, 2, 2}, {1, 1, 1}};
    AnalyticWarp w = make_translation_warp({3, -2, 5});
    DisplacementField f = ground_truth_field(w, grid);
    CHECK(f.at(3, 4, 5).x == doctest::Approx(3.0));
    CHECK(f.at(0, 0, 0).y == doctest::Approx(-2.0));
    CHECK(f.at(7, 7, 7).z == doctest::Approx(5.0));
}
