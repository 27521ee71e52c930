use std::path::Path;
use std::process::ExitCode;

fn main() -> ExitCode {
    let results = agora_cli::acceptance::run_all(Path::new(env!("CARGO_BIN_EXE_agora")));
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
