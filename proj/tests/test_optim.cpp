// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#include "opsc/error.hpp"
#include "opsc/optim.hpp"
#include "opsc/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

using namespace opsc;
using namespace opsc::optim;
using P = ad::Parameter<double>;
using TD = ad::Tensor<double>;

namespace
{
P param(std::string name, std::vector<double> v, std::size_t group = 0)
{
    const auto n = v.size();
    P p(std::move(name), TD({n}, std::move(v)), group);
    return p;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters unchanged")
{
    P p = param("w", {1.0, -2.0, 3.0});
    p.grad = TD({3}, {5.0, -1.0, 0.25});
    const auto before = p.value;
    Adam<double> adam;
    const std::vector<double> zero = {0.0};
    adam.step({&p}, zero);
    CHECK(p.value == before);
    sgd_step<double>({&p}, zero, 0.1);
    CHECK(p.value == before);
}

TEST_CASE("sgd with weight decay")
{
    P p = param("w", {1.0});
    const std::vector<double> lr = {0.5};
    sgd_step<double>({&p}, lr, 0.1);
    CHECK(p.value[0] == doctest::Approx(0.95));

    p.grad[0] = 2.0;
    sgd_step<double>({&p}, lr, 0.0);
    CHECK(p.value[0] == doctest::Approx(-0.05));
}

TEST_CASE("first Adam step moves each weight by about the learning rate")
{
    P p = param("w", {1.0, 1.0, 1.0});
    p.grad = TD({3}, {0.3, -7.0, 1e-3});
    Adam<double> adam({0.9, 0.99, 1e-7, 0.0});
    const std::vector<double> lr = {0.01};
    adam.step({&p}, lr);
    // m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps).
    CHECK(p.value[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(p.value[1] == doctest::Approx(1.0 + 0.01).epsilon(1e-6));
    CHECK(p.value[2] == doctest::Approx(1.0 - 0.01 * 1e-3 / (1e-3 + 1e-7)).epsilon(1e-12));
}

TEST_CASE("Adam matches a scalar reference over many steps")
{
    const double b1 = 0.9, b2 = 0.99, eps = 1e-7, wd = 0.01;
    Adam<double> adam({b1, b2, eps, wd});
    P a = param("a", {0.5, -0.2}, 0), b = param("b", {1.5}, 1);
    const std::vector<double> lrs = {0.01, 0.03};

    std::vector<double> w = {0.5, -0.2, 1.5}, m(3, 0.0), v(3, 0.0);
    const double lr_of[] = {0.01, 0.01, 0.03};
    Rng rng(1);
    for (int t = 1; t <= 25; ++t)
    {
        std::vector<double> g(3);
        for (auto& x : g)
            x = rng.uniform(-1, 1);
        a.grad = TD({2}, {g[0], g[1]});
        b.grad = TD({1}, {g[2]});
        adam.step({&a, &b}, lrs);
        for (std::size_t i = 0; i < 3; ++i)
        {
            m[i] = b1 * m[i] + (1 - b1) * g[i];
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
            w[i] = w[i] - lr_of[i] * wd * w[i] - lr_of[i] * mh / (std::sqrt(vh) + eps);
        }
    }
    CHECK(a.value[0] == doctest::Approx(w[0]).epsilon(1e-12));
    CHECK(a.value[1] == doctest::Approx(w[1]).epsilon(1e-12));
    CHECK(b.value[0] == doctest::Approx(w[2]).epsilon(1e-12));
    CHECK(adam.state().at("a").steps == 25);
}

TEST_CASE("group index past the list uses the last rate")
{
    P p = param("w", {1.0}, 7);
    p.grad[0] = 1.0;
    const std::vector<double> lrs = {0.0, 0.25};
    sgd_step<double>({&p}, lrs, 0.0);
    CHECK(p.value[0] == doctest::Approx(0.75));
    CHECK_THROWS_AS(sgd_step<double>({&p}, std::span<const double>{}, 0.0), UsageError);
}

TEST_CASE("frozen parameters are bitwise unchanged")
{
    P frozen = param("f", {0.1, 0.2, 0.3});
    frozen.frozen = true;
    P live = param("l", {0.1});
    Adam<double> adam;
    AveragedSgd<double> asgd(0.01);
    asgd.start_averaging();
    const std::vector<double> lr = {0.1};
    const auto before = frozen.value;
    Rng rng(2);
    for (int i = 0; i < 50; ++i)
    {
        for (auto& g : frozen.grad.storage())
            g = rng.uniform(-1, 1);
        // Even a non-finite gradient on a frozen parameter is ignored.
        frozen.grad[0] = std::numeric_limits<double>::quiet_NaN();
        live.grad[0] = rng.uniform(-1, 1);
        adam.step({&frozen, &live}, lr);
        sgd_step<double>({&frozen, &live}, lr, 0.1);
        asgd.step({&frozen, &live}, lr);
    }
    CHECK(std::memcmp(before.data(), frozen.value.data(), before.size() * sizeof(double)) == 0);
    CHECK(adam.state().count("f") == 0);
}

TEST_CASE("non-finite gradient names the parameter")
{
    P good = param("good", {1.0});
    P bad = param("encoder.lstm0.U", {1.0, 2.0});
    bad.grad[1] = std::numeric_limits<double>::infinity();
    const std::vector<double> lr = {0.1};
    for (int which = 0; which < 2; ++which)
    {
        try
        {
            if (which == 0)
            {
                Adam<double> adam;
                adam.step({&good, &bad}, lr);
            }
            else
            {
                sgd_step<double>({&good, &bad}, lr, 0.0);
            }
            FAIL("expected a NumericalError");
        }
        catch (const NumericalError& e)
        {
            CHECK(std::string(e.what()).find("encoder.lstm0.U") != std::string::npos);
        }
        // Nothing moves when the step is rejected.
        CHECK(good.value[0] == 1.0);
    }
}

TEST_CASE("averaged SGD averages the iterates after the trigger")
{
    P p = param("w", {0.0});
    AveragedSgd<double> asgd;
    const std::vector<double> lr = {1.0};
    p.grad[0] = -1.0;
    asgd.step({&p}, lr);  // w = 1, not averaged
    CHECK_FALSE(asgd.averaging());
    asgd.start_averaging();
    asgd.step({&p}, lr);  // w = 2
    asgd.step({&p}, lr);  // w = 3
    asgd.step({&p}, lr);  // w = 4
    CHECK(asgd.averaged_steps() == 3);
    asgd.swap_in_average({&p});
    CHECK(p.value[0] == doctest::Approx(3.0));
    asgd.swap_in_average({&p});
    CHECK(p.value[0] == doctest::Approx(4.0));
}

TEST_CASE("identical inputs give identical updates")
{
    auto run = [] {
        P p = param("w", {0.3, -0.7});
        Adam<float> adam;
        ad::Parameter<float> f("w", p.value.cast<float>());
        Rng rng(3);
        const std::vector<double> lr = {0.02};
        for (int i = 0; i < 20; ++i)
        {
            f.grad = ad::Tensor<float>({2}, {static_cast<float>(rng.uniform(-1, 1)),
                                             static_cast<float>(rng.uniform(-1, 1))});
            adam.step({&f}, lr);
        }
        return f.value;
    };
    CHECK(run() == run());
}
