use std::io::Write;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, rec| {
            writeln!(
                buf,
                "level={} target={} msg={:?}",
                rec.level(),
                rec.target(),
                rec.args().to_string()
            )
        })
        .init();
    std::process::exit(kepler::cli::run_command(std::env::args_os()));
}
