#pragma once

#include "pfgan/evalcli/cli.hpp"
#include "pfgan/evalcli/config_file.hpp"
#include "pfgan/evalcli/eval.hpp"
#include "pfgan/evalcli/pgm.hpp"
