// SPDX-License-Identifier: Apache-2.0

//! Drives the command-line front end in-process: build, optimize, cost and
//! simulate the KWS model in a temporary directory.

use qflow::cli::run;

fn main() {
    let dir = std::env::temp_dir().join("qflow-cli-session");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = |f: &str| dir.join(f).to_string_lossy().into_owned();
    let (kws, opt) = (path("kws.json"), path("kws_opt.json"));
    let steps: [Vec<&str>; 4] = [
        vec!["zoo", "kws-mlp", "-o", &kws],
        vec!["optimize", &kws, "-o", &opt],
        vec!["cost", &opt, "--baseline", &kws],
        vec!["simulate", &opt, "--mode", "finn", "--bench"],
    ];
    for args in steps {
        println!("$ qflow {}", args.join(" "));
        let code = run(std::iter::once("qflow").chain(args), &mut std::io::stdout(), &mut std::io::stderr());
        println!("(exit {code})\n");
    }
}
