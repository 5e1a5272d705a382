fn main() {
    std::process::exit(stepgoal::cli::run(std::env::args_os()));
}
