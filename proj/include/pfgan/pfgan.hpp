#pragma once

#include "pfgan/diffmath.hpp"
#include "pfgan/discriminator.hpp"
#include "pfgan/evalcli.hpp"
#include "pfgan/gantrain.hpp"
#include "pfgan/generator.hpp"
#include "pfgan/synthtask.hpp"
